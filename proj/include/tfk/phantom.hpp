#pragma once

// Synthetic anatomy and the toy image-formation rule used for training and
// evaluating the generative model at desk scale.
//
// Image rule, per brain voxel with tissue t and tumor concentration c:
//
//   image = clamp(base_m(t) + texture + amp_m * ramp(c) + extra_m * enh(c), 0, 1)
//   ramp(c) = clamp((c - 0.1) / 0.2, 0, 1)
//   enh(c)  = clamp((c - 0.5) / 0.2, 0, 1)
//
// and 0 outside the brain. ramp reaches 1/2 at c = 0.2 and enh reaches 1/2 at
// c = 0.6, so a tumor is read back from an image by
//
//   dev = sign(amp_m) * (image - base_m(t))
//   whole tumor  <=> dev >= |amp_m| / 2
//   enhancing    <=> dev >= |amp_m| + |extra_m| / 2
//
// which inverts the 0.2 / 0.6 concentration thresholds exactly when the
// texture is zero.

#include <cstdint>
#include <span>
#include <vector>

#include "tfk/conditioning.hpp"
#include "tfk/flowmatch.hpp"
#include "tfk/grid.hpp"

namespace tfk {

struct ToyContrast {
  double base_csf, base_gray, base_white;
  double amp;    ///< whole-tumor contrast
  double extra;  ///< additional contrast of the enhancing core, same sign as amp
};

const ToyContrast& toy_contrast(Modality m);

/// Ellipsoidal brain: white matter core, gray matter shell, a one-voxel CSF rim
/// and a CSF ventricle. jitter = 0 gives the canonical phantom; jitter = 1
/// perturbs centre and radii by up to a voxel-scale amount drawn from seed.
TissueMap make_phantom(const GridSpec& spec, std::uint64_t seed, double jitter = 1.0);

/// Smooth subject-specific intensity variation (a few random plane waves,
/// peak amplitude 0.03) on brain voxels; zero elsewhere.
ScalarField3D texture_field(const TissueMap& tissue, std::uint64_t seed);

ScalarField3D synthesize_image(const TissueMap& tissue, const ScalarField3D& conc, Modality m,
                               const ScalarField3D& texture);

/// Decodes Edema / Enhancing labels from an image with the inverse rule.
LabelMask segment_toy(const ScalarField3D& image, const TissueMap& tissue, Modality m);

struct PhantomCase {
  TissueMap tissue;
  ScalarField3D concentration;
  ScalarField3D image;
  Modality modality = Modality::FLAIR;
};

struct ToyDatasetOptions {
  std::size_t cases = 500;
  std::size_t snapshots_per_subject = 5;
  double max_days = 120.0;
  std::vector<Modality> modalities{kAllModalities.begin(), kAllModalities.end()};
};

/// Random subjects (phantom + texture), each with one grown tumor sampled at
/// several times; each snapshot becomes one case with a random modality.
std::vector<PhantomCase> make_toy_cases(const GridSpec& spec, std::uint64_t seed, const ToyDatasetOptions& opt);

std::vector<TrainingPair> to_training_pairs(std::span<const PhantomCase> cases);

/// A random white-matter voxel of the phantom, as a seed location.
std::array<double, 3> random_white_matter_voxel(const TissueMap& tissue, std::uint64_t seed);

}  // namespace tfk
