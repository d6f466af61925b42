#include "doctest.h"
#include "helpers.hpp"
#include "tfk/growth.hpp"
#include "tfk/metrics.hpp"
#include "tfk/phantom.hpp"

using namespace tfk;

TEST_SUITE("phantom") {

TEST_CASE("canonical phantom anatomy") {
  const TissueMap t = make_phantom(GridSpec::cube(16), 3, 0.0);
  std::array<std::size_t, 4> count{};
  for (auto l : t.labels) ++count[static_cast<std::size_t>(l)];
  CHECK(count[0] > 0);
  CHECK(count[1] > 0);
  CHECK(count[2] > 0);
  CHECK(count[2] + count[3] > count[1]);
  // Corners are outside the brain, the centre is parenchyma.
  CHECK(t.labels[0] == TissueLabel::Background);
  CHECK(t.is_parenchyma(t.spec.index(8, 10, 8)));
  CHECK(make_phantom(GridSpec::cube(16), 99, 0.0).labels == t.labels);
  CHECK_FALSE(make_phantom(GridSpec::cube(16), 99, 1.0).labels == make_phantom(GridSpec::cube(16), 98, 1.0).labels);
}

TEST_CASE("toy rule inverts the concentration thresholds without texture") {
  const TissueMap t = make_phantom(GridSpec::cube(16), 4, 0.0);
  GrowthParams g;
  g.seed_center = random_white_matter_voxel(t, 5);
  g.seed_amplitude = 1.0;
  g.seed_sigma = 3.0;
  const ScalarField3D conc = seed_initial(t, g);
  const LabelMask truth = concentration_to_mask(conc);
  const ScalarField3D flat = field_new(t.spec, 0.0);
  for (Modality m : kAllModalities) {
    const ScalarField3D img = synthesize_image(t, conc, m, flat);
    CHECK(img.is_concentration());
    const LabelMask seg = segment_toy(img, t, m);
    for (std::size_t i = 0; i < seg.labels.size(); ++i) {
      if (!t.is_parenchyma(i)) continue;
      // Exactly at a threshold the clamped ramps meet at 1/2, which rounds
      // either way in floating point; skip those voxels.
      if (std::abs(conc[i] - 0.2) < 1e-12 || std::abs(conc[i] - 0.6) < 1e-12) continue;
      REQUIRE(seg.labels[i] == truth.labels[i]);
    }
  }
}

TEST_CASE("texture keeps tumor segmentation close") {
  const TissueMap t = make_phantom(GridSpec::cube(16), 6, 1.0);
  GrowthParams g;
  g.seed_center = random_white_matter_voxel(t, 7);
  g.seed_sigma = 2.5;
  const ScalarField3D conc = seed_initial(t, g);
  const ScalarField3D tex = texture_field(t, 8);
  double peak = 0.0;
  for (double v : tex.values()) peak = std::max(peak, std::abs(v));
  CHECK(peak <= 0.03);
  for (Modality m : kAllModalities) {
    const LabelMask seg = segment_toy(synthesize_image(t, conc, m, tex), t, m);
    CHECK(dice(seg, concentration_to_mask(conc)) > 0.9);
  }
}

TEST_CASE("toy dataset is reproducible") {
  ToyDatasetOptions opt;
  opt.cases = 12;
  opt.modalities = {Modality::FLAIR, Modality::T2};
  const auto a = make_toy_cases(GridSpec::cube(10), 11, opt);
  const auto b = make_toy_cases(GridSpec::cube(10), 11, opt);
  REQUIRE(a.size() == 12);
  for (std::size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].image == b[k].image);
    REQUIRE(a[k].concentration.is_concentration());
    REQUIRE((a[k].modality == Modality::FLAIR || a[k].modality == Modality::T2));
  }
  const auto pairs = to_training_pairs(a);
  CHECK(pairs.size() == 12);
  CHECK(pairs[3].cond.modality == a[3].modality);
}

}  // TEST_SUITE
