#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tfk/error.hpp"
#include "tfk/longitudinal.hpp"
#include "tfk/metrics.hpp"
#include "tfk/parallel.hpp"
#include "tfk/phantom.hpp"

using namespace tfk;

namespace {

VelocityModel small_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.hidden = 4;
  VelocityModel m(cfg);
  Rng r(seed, 3);
  for (double& w : m.weights()) w = 0.1 * r.normal();
  return m;
}

struct Setup {
  TissueMap tissue;
  GrowthParams growth;
};

Setup phantom_setup() {
  Setup s{make_phantom(GridSpec::cube(10), 1, 0.0), {}};
  s.growth.seed_center = random_white_matter_voxel(s.tissue, 2);
  s.growth.rho = 0.05;
  s.growth.seed_sigma = 1.5;
  return s;
}

bool same_bundle(const TrajectoryBundle& a, const TrajectoryBundle& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t k = 0; k < a.entries.size(); ++k) {
    if (!(a.entries[k].volume == b.entries[k].volume)) return false;
    if (a.entries[k].derived_mask.labels != b.entries[k].derived_mask.labels) return false;
    if (a.entries[k].psnr_nontumor_vs_previous != b.entries[k].psnr_nontumor_vs_previous) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("longitudinal") {

TEST_CASE("tau_tilde = 1 freezes the sequence") {
  const Setup s = phantom_setup();
  LongitudinalPlan plan;
  plan.time_points = {0, 10, 20, 30};
  plan.tau_tilde = 1.0;
  plan.integrator_steps = 8;
  plan.modalities = {Modality::T1, Modality::FLAIR};
  const auto b = generate_trajectory(small_model(1), s.tissue, s.growth, plan, std::nullopt, 5);
  REQUIRE(b.entries.size() == 8);
  for (std::size_t t = 1; t < 4; ++t)
    for (std::size_t m = 0; m < 2; ++m) {
      REQUIRE(b.entry(t, m).volume == b.entry(t - 1, m).volume);
      REQUIRE(*b.entry(t, m).psnr_nontumor_vs_previous == kPsnrCap);
    }
  CHECK_FALSE(b.entry(0, 0).volume == b.entry(0, 1).volume);
}

TEST_CASE("single time point") {
  const Setup s = phantom_setup();
  LongitudinalPlan plan;
  plan.integrator_steps = 5;
  const auto b = generate_trajectory(small_model(2), s.tissue, s.growth, plan, std::nullopt, 1);
  REQUIRE(b.entries.size() == 1);
  CHECK_FALSE(b.entries[0].psnr_nontumor_vs_previous.has_value());
  CHECK(b.entries[0].t_days == 0.0);

  const auto rows = corruption_sweep(small_model(2), s.tissue, s.growth, plan, {0.15}, 1);
  REQUIRE(rows.size() == 1);
  CHECK(std::isnan(rows[0].mean_psnr));
  CHECK(rows[0].mean_dice == b.entries[0].dice_vs_conditioning);
}

TEST_CASE("generation is deterministic across runs and workers") {
  const Setup s = phantom_setup();
  LongitudinalPlan plan;
  plan.time_points = {0, 15, 30};
  plan.integrator_steps = 6;
  plan.modalities = {Modality::T1, Modality::T2, Modality::FLAIR};
  const auto m = small_model(3);
  set_num_threads(1);
  const auto a = generate_trajectory(m, s.tissue, s.growth, plan, std::nullopt, 9);
  set_num_threads(3);
  const auto b = generate_trajectory(m, s.tissue, s.growth, plan, std::nullopt, 9);
  set_num_threads(1);
  CHECK(same_bundle(a, b));
  const auto c = generate_trajectory(m, s.tissue, s.growth, plan, std::nullopt, 10);
  CHECK_FALSE(same_bundle(a, c));
}

TEST_CASE("initial volumes replace the t = 0 sample") {
  const Setup s = phantom_setup();
  LongitudinalPlan plan;
  plan.time_points = {0, 10};
  plan.integrator_steps = 4;
  const ScalarField3D init = testutil::random_field(s.tissue.spec, 4);
  const auto b = generate_trajectory(small_model(4), s.tissue, s.growth, plan, std::vector{init}, 1);
  CHECK(b.entries[0].volume == init);
  CHECK_THROWS_AS(generate_trajectory(small_model(4), s.tissue, s.growth, plan, std::vector{init, init}, 1), Error);
}

TEST_CASE("metric records follow their definitions") {
  const Setup s = phantom_setup();
  LongitudinalPlan plan;
  plan.time_points = {0, 20, 40};
  plan.integrator_steps = 5;
  const auto b = generate_trajectory(small_model(5), s.tissue, s.growth, plan, std::nullopt, 3);
  const auto rows = temporal_curves(b);
  REQUIRE(rows.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& e = b.entries[t];
    CHECK(e.derived_mask.labels == segment_toy(e.volume, s.tissue, Modality::FLAIR).labels);
    CHECK(rows[t].dice == e.dice_vs_conditioning);
    CHECK(rows[t].psnr == e.psnr_nontumor_vs_previous);
  }
}

TEST_CASE("sweep at tau 1 with a static tumor") {
  const Setup s = phantom_setup();
  LongitudinalPlan plan;
  plan.time_points = {0, 10, 20};
  plan.integrator_steps = 5;
  const ScalarField3D c0 = seed_initial(s.tissue, s.growth);
  const std::vector<ScalarField3D> still{c0, c0, c0};
  plan.tau_tilde = 1.0;
  const auto b = generate_trajectory_from_fields(small_model(6), s.tissue, still, plan, std::nullopt, 2);
  for (const auto& e : b.entries) CHECK(e.dice_vs_conditioning == b.entries[0].dice_vs_conditioning);
  const auto rows = temporal_curves(b);
  for (std::size_t t = 1; t < rows.size(); ++t) CHECK(*rows[t].psnr == kPsnrCap);

  const auto sweep = corruption_sweep(small_model(6), s.tissue, s.growth, plan, {1.0, 0.15}, 2);
  CHECK(sweep[0].mean_psnr == kPsnrCap);
  plan.tau_tilde = 0.15;
  const auto def = generate_trajectory(small_model(6), s.tissue, s.growth, plan, std::nullopt, 2);
  double dsum = 0.0, psum = 0.0;
  for (std::size_t t = 1; t < 3; ++t) {
    dsum += def.entries[t].dice_vs_conditioning;
    psum += *def.entries[t].psnr_nontumor_vs_previous;
  }
  CHECK(sweep[1].mean_dice == doctest::Approx(dsum / 2).epsilon(1e-15));
  CHECK(sweep[1].mean_psnr == doctest::Approx(psum / 2).epsilon(1e-15));
}

TEST_CASE("plan and model validation") {
  const Setup s = phantom_setup();
  auto code = [&](LongitudinalPlan p, const VelocityModel& m) {
    try {
      generate_trajectory(m, s.tissue, s.growth, p, std::nullopt, 1);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  const auto m = small_model(7);
  LongitudinalPlan p;
  p.time_points = {5, 10};
  CHECK(code(p, m) == ErrorCode::PlanInvalid);
  p.time_points = {0, 10, 10};
  CHECK(code(p, m) == ErrorCode::PlanInvalid);
  p.time_points = {0, 10};
  p.tau_tilde = 1.5;
  CHECK(code(p, m) == ErrorCode::PlanInvalid);
  p.tau_tilde = 0.15;
  p.modalities.clear();
  CHECK(code(p, m) == ErrorCode::PlanInvalid);

  ModelConfig two;
  two.data_channels = 2;
  p.modalities = {Modality::FLAIR};
  CHECK(code(p, VelocityModel(two)) == ErrorCode::ModelConditioningMismatch);
  ModelConfig few;
  few.num_modalities = 2;
  CHECK(code(p, VelocityModel(few)) == ErrorCode::ModelConditioningMismatch);
}

}  // TEST_SUITE
