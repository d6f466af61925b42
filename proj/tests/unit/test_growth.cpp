#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tfk/error.hpp"
#include "tfk/growth.hpp"
#include "tfk/metrics.hpp"

using namespace tfk;

namespace {

double brain_sum(const ScalarField3D& c, const TissueMap& t) {
  std::vector<double> xs;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (t.is_brain(i)) xs.push_back(c[i]);
  return pairwise_sum(xs);
}

TissueMap white_line(std::size_t n) { return TissueMap::filled(GridSpec{n, 1, 1, 1, 1, 1}, TissueLabel::WhiteMatter); }

// Position of the C = 0.5 level set on a monotone decreasing profile,
// interpolated linearly between the bracketing voxels.
double front_position(const ScalarField3D& c) {
  for (std::size_t x = 1; x < c.size(); ++x) {
    if (c[x - 1] >= 0.5 && c[x] < 0.5) {
      return static_cast<double>(x - 1) + (c[x - 1] - 0.5) / (c[x - 1] - c[x]);
    }
  }
  return std::nan("");
}

double measured_front_speed(double rho, double d, std::size_t n, double t0, double t1) {
  GrowthParams p;
  p.rho = rho;
  p.d_white = d;
  p.seed_center = {0.0, 0.0, 0.0};
  p.seed_sigma = 3.0;
  p.seed_amplitude = 1.0;
  const auto snaps = simulate_at(white_line(n), p, {t0, t1}, 0.5 * stable_dt_bound(GridSpec{n, 1, 1, 1, 1, 1}, d));
  return (front_position(snaps[1].concentration) - front_position(snaps[0].concentration)) / (t1 - t0);
}

double l2_diff(const ScalarField3D& a, const ScalarField3D& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("growth") {

TEST_CASE("diffusion_map per tissue") {
  GrowthParams p;
  p.d_white = 0.28;
  p.gray_ratio = 0.1;
  const auto white = diffusion_map(TissueMap::filled(GridSpec::cube(4), TissueLabel::WhiteMatter), p);
  CHECK(field_map_reduce(white, Reduction::Min) == 0.28);
  CHECK(field_map_reduce(white, Reduction::Max) == 0.28);
  const auto csf = diffusion_map(TissueMap::filled(GridSpec::cube(4), TissueLabel::CSF), p);
  CHECK(field_map_reduce(csf, Reduction::Max) == 0.0);

  TissueMap mixed(GridSpec{4, 1, 1, 1, 1, 1}, {TissueLabel::Background, TissueLabel::CSF, TissueLabel::GrayMatter,
                                               TissueLabel::WhiteMatter});
  const auto d = diffusion_map(mixed, p);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == 0.0);
  CHECK(d[2] == doctest::Approx(0.028).epsilon(1e-15));
  CHECK(d[3] == 0.28);
}

TEST_CASE("seed_initial formula and mask clamp") {
  const TissueMap t = testutil::random_tissue(GridSpec::cube(9), 5);
  TissueMap white = TissueMap::filled(GridSpec::cube(9), TissueLabel::WhiteMatter);
  GrowthParams p;
  p.seed_center = {4, 4, 4};
  p.seed_sigma = 2.0;
  p.seed_amplitude = 1.0;
  const auto c = seed_initial(white, p);
  CHECK(c.at(4, 4, 4) == 1.0);
  CHECK(c.at(6, 4, 4) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(c.at(4, 2, 4) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));

  p.seed_amplitude = 0.7;
  TissueMap tt = t;
  tt.labels[white.spec.index(4, 4, 4)] = TissueLabel::WhiteMatter;
  const auto c2 = seed_initial(tt, p);
  for (std::size_t i = 0; i < c2.size(); ++i) {
    if (!tt.is_brain(i)) REQUIRE(c2[i] == 0.0);
    REQUIRE(c2[i] >= 0.0);
    REQUIRE(c2[i] <= 1.0);
  }
  CHECK(c2.at(4, 4, 4) == doctest::Approx(0.7));
}

TEST_CASE("seed outside the brain is rejected") {
  TissueMap t = TissueMap::filled(GridSpec::cube(5), TissueLabel::WhiteMatter);
  t.labels[t.spec.index(0, 0, 0)] = TissueLabel::Background;
  GrowthParams p;
  p.seed_center = {0, 0, 0};
  try {
    seed_initial(t, p);
    FAIL("expected SeedOutsideBrain");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SeedOutsideBrain);
  }
  p.seed_center = {7, 2, 2};
  CHECK_THROWS_AS(seed_initial(t, p), Error);
}

TEST_CASE("reaction-only Euler step") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(4), TissueLabel::WhiteMatter);
  const auto out = fk_step(field_new(t.spec, 0.1), field_new(t.spec, 0.0), t, 0.03, 1.0);
  for (double v : out.values()) REQUIRE(v == doctest::Approx(0.1027).epsilon(1e-14));
}

TEST_CASE("constant field is a diffusion fixed point") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(6), TissueLabel::WhiteMatter);
  GrowthParams p;
  const auto dmap = diffusion_map(t, p);
  const auto c = field_new(t.spec, 0.37);
  CHECK(fk_step(c, dmap, t, 0.0, 0.5) == c);
}

TEST_CASE("unstable step and mismatched grids") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(4), TissueLabel::WhiteMatter);
  GrowthParams p;
  const auto dmap = diffusion_map(t, p);
  const double bound = stable_dt_bound(t.spec, p.d_white);
  CHECK(bound == doctest::Approx(0.9 / (6 * 0.28)));
  try {
    fk_step(field_new(t.spec, 0.1), dmap, t, 0.03, bound * 1.01);
    FAIL("expected UnstableTimestep");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnstableTimestep);
  }
  CHECK_NOTHROW(fk_step(field_new(t.spec, 0.1), dmap, t, 0.03, bound));
  try {
    fk_step(field_new(GridSpec::cube(5), 0.1), dmap, t, 0.03, 0.1);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("mass is conserved without reaction") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TissueMap t = testutil::random_tissue(GridSpec::cube(10), seed);
    GrowthParams p;
    p.gray_ratio = 0.3;
    const auto dmap = diffusion_map(t, p);
    ScalarField3D c = testutil::random_field(t.spec, seed + 100);
    for (std::size_t i = 0; i < c.size(); ++i)
      if (!t.is_parenchyma(i)) c[i] = 0.0;
    const double dt = stable_dt_bound(t.spec, p.d_white);
    double prev = brain_sum(c, t);
    for (int k = 0; k < 100; ++k) {
      c = fk_step(c, dmap, t, 0.0, dt);
      const double now = brain_sum(c, t);
      REQUIRE(std::abs(now - prev) <= 1e-10 * prev);
      prev = now;
    }
  }
}

TEST_CASE("outputs stay in [0, 1] for random fields and tissue") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng r(seed, 9);
    const TissueMap t = testutil::random_tissue(GridSpec{7, 6, 5, 1, 1, 1}, seed);
    GrowthParams p;
    p.d_white = r.uniform(0.01, 1.0);
    p.gray_ratio = r.uniform(0.01, 1.0);
    const auto dmap = diffusion_map(t, p);
    const double rho = r.uniform(0.0, 2.0);
    const double dt = r.uniform(0.01, 1.0) * stable_dt_bound(t.spec, p.d_white);
    const auto out = fk_step(testutil::random_field(t.spec, seed), dmap, t, rho, dt);
    REQUIRE(out.is_concentration());
  }
}

TEST_CASE("logistic closed form without diffusion") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(6), TissueLabel::WhiteMatter);
  const auto c0 = testutil::random_field(t.spec, 42, 0.01, 0.9);
  const auto dmap = field_new(t.spec, 0.0);
  const double rho = 0.03, dt = 0.1;
  ScalarField3D c = c0;
  for (int k = 0; k < 1000; ++k) c = fk_step(c, dmap, t, rho, dt);
  const double e = std::exp(rho * 100.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double exact = c0[i] * e / (1.0 + c0[i] * (e - 1.0));
    worst = std::max(worst, std::abs(c[i] - exact));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("logistic error is first order in dt") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(2), TissueLabel::WhiteMatter);
  const auto dmap = field_new(t.spec, 0.0);
  const double rho = 0.03, c0 = 0.1, e = std::exp(rho * 100.0);
  const double exact = c0 * e / (1.0 + c0 * (e - 1.0));
  std::vector<double> err;
  for (double dt : {0.4, 0.2, 0.1, 0.05}) {
    ScalarField3D c = field_new(t.spec, c0);
    const int steps = static_cast<int>(std::lround(100.0 / dt));
    for (int k = 0; k < steps; ++k) c = fk_step(c, dmap, t, rho, dt);
    err.push_back(std::abs(c[0] - exact));
  }
  for (std::size_t k = 1; k < err.size(); ++k) CHECK(err[k] / err[k - 1] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("simulate snapshot schedule") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(8), TissueLabel::WhiteMatter);
  GrowthParams p;
  p.seed_center = {4, 4, 4};
  SimClock clock{0.25, 0.0, 10.0};
  const auto only = simulate(t, p, clock);
  REQUIRE(only.size() == 1);
  CHECK(only[0].t_days == 0.0);
  CHECK(only[0].concentration == seed_initial(t, p));

  clock.t_end = 25.0;
  const auto snaps = simulate(t, p, clock);
  REQUIRE(snaps.size() == 4);
  CHECK(snaps[1].t_days == 10.0);
  CHECK(snaps[3].t_days == 25.0);
  double prev = -1.0;
  for (const auto& s : snaps) {
    CHECK(s.concentration.is_concentration());
    const double m = field_map_reduce(s.concentration, Reduction::Sum);
    CHECK(m >= prev);
    prev = m;
  }
}

TEST_CASE("front speed approaches 2 sqrt(rho D)") {
  const double expected = 2.0 * std::sqrt(0.03 * 0.28);
  CHECK(std::abs(measured_front_speed(0.03, 0.28, 192, 300.0, 600.0) - expected) <= 0.1 * expected);

  // Pulled fronts lag the asymptotic speed by 3 / (2 lambda t), lambda = sqrt(rho / D);
  // averaged over [t0, t1] that is 3 ln(t1 / t0) / (2 lambda (t1 - t0)).
  for (auto [rho, d] : {std::pair{0.03, 0.28}, std::pair{0.05, 0.2}, std::pair{0.02, 0.5}}) {
    const double lambda = std::sqrt(rho / d);
    const double lagged = 2.0 * std::sqrt(rho * d) - 3.0 * std::log(2.0) / (2.0 * lambda * 300.0);
    const double speed = measured_front_speed(rho, d, 192, 300.0, 600.0);
    CHECK(std::abs(speed - lagged) <= 0.03 * lagged);
  }
}

TEST_CASE("halving dt converges") {
  const TissueMap t = testutil::random_tissue(GridSpec::cube(10), 8);
  TissueMap tt = t;
  tt.labels[t.spec.index(5, 5, 5)] = TissueLabel::WhiteMatter;
  GrowthParams p;
  p.rho = 0.1;
  p.seed_center = {5, 5, 5};
  std::vector<ScalarField3D> finals;
  for (double dt : {0.4, 0.2, 0.1, 0.05}) finals.push_back(simulate_at(tt, p, {30.0}, dt).back().concentration);
  const double e1 = l2_diff(finals[0], finals[1]);
  const double e2 = l2_diff(finals[1], finals[2]);
  const double e3 = l2_diff(finals[2], finals[3]);
  CHECK(e2 < e1);
  CHECK(e3 < e2);
  CHECK(e2 / e1 == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("threshold labels") {
  const ScalarField3D c(GridSpec{7, 1, 1, 1, 1, 1}, {0.0, 0.19, 0.2, 0.5, 0.5999, 0.6, 1.0});
  const LabelMask m = concentration_to_mask(c);
  CHECK(m.labels[0] == MaskLabel::Background);
  CHECK(m.labels[1] == MaskLabel::Background);
  CHECK(m.labels[2] == MaskLabel::Edema);
  CHECK(m.labels[3] == MaskLabel::Edema);
  CHECK(m.labels[4] == MaskLabel::Edema);
  CHECK(m.labels[5] == MaskLabel::Enhancing);
  CHECK(m.labels[6] == MaskLabel::Enhancing);

  // Monotone partition over a sweep of values.
  std::vector<double> vals;
  for (int k = 0; k <= 1000; ++k) vals.push_back(k / 1000.0);
  const LabelMask sweep = concentration_to_mask(ScalarField3D(GridSpec{vals.size(), 1, 1, 1, 1, 1}, vals));
  for (std::size_t k = 1; k < vals.size(); ++k) {
    REQUIRE(static_cast<int>(sweep.labels[k]) >= static_cast<int>(sweep.labels[k - 1]));
  }

  ThresholdPolicy bad;
  bad.edema_low = 0.3;
  CHECK_THROWS_AS(concentration_to_mask(c, bad), Error);
}

TEST_CASE("fit recovers grid-contained ground truth") {
  TissueMap t = TissueMap::filled(GridSpec::cube(12), TissueLabel::Background);
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    const auto [x, y, z] = t.spec.coords(i);
    if (x > 0 && y > 0 && z > 0 && x < 11 && y < 11 && z < 11) t.labels[i] = TissueLabel::WhiteMatter;
  }
  GrowthParams truth;
  truth.rho = 0.04;
  truth.d_white = 0.2;
  truth.seed_center = {6, 5, 6};
  truth.seed_sigma = 1.5;
  const SimClock clock{0.25, 20.0, 20.0};
  const LabelMask target = concentration_to_mask(simulate(t, truth, clock).back().concentration);

  FitSearchGrid grid;
  grid.rho = {0.02, 0.04, 0.06};
  grid.d_white = {0.1, 0.2, 0.3};
  grid.seed_centers = {{5, 5, 6}, {6, 5, 6}, {6, 6, 6}};
  grid.base = truth;
  const FitResult r = fit_growth_params(target, t, grid, clock);
  CHECK(r.fit_dice == 1.0);
  CHECK(r.params.rho == truth.rho);
  CHECK(r.params.d_white == truth.d_white);
  CHECK(r.params.seed_center == truth.seed_center);

  // t_end = 0: the target is the thresholded seed itself.
  const SimClock still{0.25, 0.0, 1.0};
  const LabelMask seed_target = concentration_to_mask(seed_initial(t, truth));
  const FitResult r0 = fit_growth_params(seed_target, t, grid, still);
  CHECK(r0.fit_dice == 1.0);
  CHECK(r0.params.seed_center == truth.seed_center);

  // Tie-break: every (rho, d) gives the same mask, so the smallest pair wins.
  CHECK(r0.grid_params.rho == 0.02);
  CHECK(r0.grid_params.d_white == 0.1);
}

TEST_CASE("fit preconditions") {
  const TissueMap t = TissueMap::filled(GridSpec::cube(6), TissueLabel::WhiteMatter);
  const LabelMask empty(t.spec, std::vector<MaskLabel>(t.labels.size(), MaskLabel::Background));
  FitSearchGrid grid;
  grid.rho = {0.03};
  grid.d_white = {0.28};
  grid.seed_centers = {{3, 3, 3}};
  try {
    fit_growth_params(empty, t, grid, SimClock{0.25, 5.0, 5.0});
    FAIL("expected EmptyTarget");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyTarget);
  }
  LabelMask one = empty;
  one.labels[0] = MaskLabel::Edema;
  grid.rho.clear();
  try {
    fit_growth_params(one, t, grid, SimClock{0.25, 5.0, 5.0});
    FAIL("expected EmptySearchGrid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySearchGrid);
  }
}

}  // TEST_SUITE
