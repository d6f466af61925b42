#pragma once

// Fisher-Kolmogorov tumor growth on a voxel grid:
//
//   dC/dt = div(D grad C) + rho C (1 - C)
//
// discretized with explicit Euler in time and a 7-point stencil in space.
// Face diffusivities are harmonic means of the adjacent voxel values, and
// only gray/white matter voxels take part in the exchange, so CSF and the
// outside of the brain act as zero-flux walls.

#include <array>
#include <cstddef>
#include <vector>

#include "tfk/grid.hpp"

namespace tfk {

struct GrowthParams {
  double rho = 0.03;           ///< proliferation rate, 1/day
  double d_white = 0.28;       ///< white matter diffusivity, mm^2/day
  double gray_ratio = 0.1;     ///< d_gray = gray_ratio * d_white
  std::array<double, 3> seed_center{0.0, 0.0, 0.0};  ///< voxel coordinates
  double seed_sigma = 2.0;     ///< mm
  double seed_amplitude = 1.0;

  /// Checks the scalar ranges; the seed location is checked by seed_initial.
  void validate() const;
  bool operator==(const GrowthParams&) const = default;
};

struct SimClock {
  double dt = 0.25;
  double t_end = 0.0;
  double snapshot_every = 1.0;

  void validate() const;
};

/// Largest explicit step allowed for a given peak diffusivity:
/// 0.9 * min(spacing)^2 / (6 * d_max). Infinite when d_max == 0.
double stable_dt_bound(const GridSpec& spec, double d_max);

struct ThresholdPolicy {
  double background_below = 0.2;
  double edema_low = 0.2;
  double edema_high = 0.6;
  double enhancing_at_or_above = 0.6;

  void validate() const;
};

struct Snapshot {
  double t_days = 0.0;
  ScalarField3D concentration;
};

ScalarField3D diffusion_map(const TissueMap& tissue, const GrowthParams& params);

/// Gaussian seed clamped to zero outside gray/white matter. Throws
/// SeedOutsideBrain when the voxel nearest to seed_center is outside the grid
/// or not brain tissue.
ScalarField3D seed_initial(const TissueMap& tissue, const GrowthParams& params);

/// One explicit Euler step. Throws UnstableTimestep if dt exceeds
/// stable_dt_bound for the peak diffusivity on parenchyma, ShapeMismatch if
/// the grids differ.
ScalarField3D fk_step(const ScalarField3D& c, const ScalarField3D& dmap, const TissueMap& tissue,
                      double rho, double dt);

/// Snapshots at 0, snapshot_every, 2 * snapshot_every, ... and t_end. The last
/// step before each snapshot is shortened to land on it exactly.
std::vector<Snapshot> simulate(const TissueMap& tissue, const GrowthParams& params,
                               const SimClock& clock);

/// Same solver, but sampled at an arbitrary ascending list of times >= 0.
std::vector<Snapshot> simulate_at(const TissueMap& tissue, const GrowthParams& params,
                                  const std::vector<double>& times, double dt);

LabelMask concentration_to_mask(const ScalarField3D& c, const ThresholdPolicy& policy = {});

struct FitSearchGrid {
  std::vector<double> rho;
  std::vector<double> d_white;
  std::vector<std::array<double, 3>> seed_centers;
  /// Supplies gray_ratio, seed_sigma and seed_amplitude.
  GrowthParams base;
};

struct FitResult {
  GrowthParams params;
  double fit_dice = 0.0;
  GrowthParams grid_params;  ///< best raw grid point before refinement
  double grid_dice = 0.0;
  std::size_t evaluations = 0;
};

/// Exhaustive grid search on whole-tumor Dice of the final simulated field,
/// ties resolved by lexicographic (rho, d_white, seed_center) order, followed by
/// one coordinate-descent round over (rho, d_white, seed x, y, z) with step
/// sizes of half, a quarter and an eighth of the grid spacing.
FitResult fit_growth_params(const LabelMask& target, const TissueMap& tissue,
                            const FitSearchGrid& search, const SimClock& clock);

}  // namespace tfk
