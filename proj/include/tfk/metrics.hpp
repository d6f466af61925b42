#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tfk/conditioning.hpp"
#include "tfk/grid.hpp"
#include "tfk/trajectory.hpp"

namespace tfk {

/// PSNR returned when the masked MSE is exactly zero.
inline constexpr double kPsnrCap = 99.0;

struct MetricRecord {
  std::string name;
  double value = 0.0;
  std::size_t mask_voxels = 0;
  std::optional<double> t_days;
  std::optional<Modality> modality;
};

/// 2|A n B| / (|A| + |B|), and 1.0 when both regions are empty.
double dice(const VoxelRegion& a, const VoxelRegion& b);
/// Whole-tumor Dice of two label masks.
double dice(const LabelMask& a, const LabelMask& b);

/// 10 log10(data_max^2 / MSE) over the mask; kPsnrCap when MSE is zero.
/// Throws EmptyMask for an empty mask.
double psnr(const ScalarField3D& a, const ScalarField3D& b, const VoxelRegion& mask,
            double data_max = 1.0);

VoxelRegion full_region(const GridSpec& spec);
VoxelRegion brain_region(const TissueMap& tissue);

struct MsSsimOptions {
  int levels = 3;
  int window = 7;
  double sigma = 1.5;
  double data_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean luminance and contrast-structure terms of a single SSIM scale.
struct SsimTerms {
  double luminance = 1.0;
  double contrast_structure = 1.0;
};

/// Gaussian-windowed SSIM terms on one scale ("valid" windows only). Axes of
/// length 1 are not filtered, so 2D slabs work.
SsimTerms ssim_terms(const ScalarField3D& a, const ScalarField3D& b, const MsSsimOptions& opt);

/// Multi-scale SSIM: prod_j cs_j^w_j * l_M^w_M with 2x average pooling between
/// scales and the first `levels` of the usual five-scale weights, renormalized.
/// Powers keep the sign of the base, so anti-correlated inputs score below 0.
/// Throws GridTooSmall if the coarsest scale is narrower than the window.
double ms_ssim(const ScalarField3D& a, const ScalarField3D& b, const MsSsimOptions& opt = {});

/// Largest level count (<= max_levels) that ms_ssim accepts on this grid.
int feasible_ms_ssim_levels(const GridSpec& spec, int window, int max_levels = 3);

struct TemporalRow {
  double t_days = 0.0;
  Modality modality = Modality::FLAIR;
  double dice = 0.0;
  std::optional<double> psnr;
};

/// Recomputes per-time-point Dice against the thresholded conditioning and
/// consecutive non-tumor PSNR from the volumes stored in the bundle. Throws
/// TooFewTimePoints for bundles with fewer than two time points.
std::vector<TemporalRow> temporal_curves(const TrajectoryBundle& bundle);

/// Brain voxels outside the union of the two whole-tumor regions.
VoxelRegion nontumor_region(const TissueMap& tissue, const VoxelRegion& a, const VoxelRegion& b);

}  // namespace tfk
