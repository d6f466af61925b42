#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tfk/error.hpp"
#include "tfk/growth.hpp"
#include "tfk/metrics.hpp"

using namespace tfk;

namespace {

VoxelRegion region_of(const GridSpec& s, std::initializer_list<std::size_t> idx) {
  VoxelRegion r{s, std::vector<std::uint8_t>(s.voxel_count(), 0)};
  for (std::size_t i : idx) r.inside[i] = 1;
  return r;
}

// Windowed SSIM terms evaluated straight from the definition: a separable
// Gaussian window placed at every valid position, statistics summed directly.
SsimTerms direct_ssim_terms(const ScalarField3D& a, const ScalarField3D& b, int window, double sigma) {
  const GridSpec& s = a.spec();
  std::vector<double> g(static_cast<std::size_t>(window));
  double tot = 0.0;
  for (int k = 0; k < window; ++k) {
    const double d = k - window / 2;
    g[static_cast<std::size_t>(k)] = std::exp(-d * d / (2 * sigma * sigma));
    tot += g[static_cast<std::size_t>(k)];
  }
  for (double& x : g) x /= tot;
  const std::size_t wx = s.nx == 1 ? 1 : window, wy = s.ny == 1 ? 1 : window, wz = s.nz == 1 ? 1 : window;
  auto wt = [&](std::size_t len, std::size_t k) { return len == 1 ? 1.0 : g[k]; };
  const double c1 = 1e-4, c2 = 9e-4;
  double lum = 0.0, cs = 0.0;
  std::size_t count = 0;
  for (std::size_t z = 0; z + wz <= s.nz; ++z)
    for (std::size_t y = 0; y + wy <= s.ny; ++y)
      for (std::size_t x = 0; x + wx <= s.nx; ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (std::size_t k = 0; k < wz; ++k)
          for (std::size_t j = 0; j < wy; ++j)
            for (std::size_t i = 0; i < wx; ++i) {
              const double w = wt(s.nx, i) * wt(s.ny, j) * wt(s.nz, k);
              const double va = a.at(x + i, y + j, z + k), vb = b.at(x + i, y + j, z + k);
              ma += w * va;
              mb += w * vb;
              aa += w * va * va;
              bb += w * vb * vb;
              ab += w * va * vb;
            }
        lum += (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += (2 * (ab - ma * mb) + c2) / ((aa - ma * ma) + (bb - mb * mb) + c2);
        ++count;
      }
  return {lum / count, cs / count};
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("dice examples") {
  const GridSpec s = GridSpec::cube(3);
  const auto a = region_of(s, {0, 1, 2, 3});
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(a, region_of(s, {10, 11})) == 0.0);
  CHECK(dice(a, region_of(s, {2, 3, 4, 5})) == 0.5);
  CHECK(dice(region_of(s, {}), region_of(s, {})) == 1.0);
  CHECK_THROWS_AS(dice(a, region_of(GridSpec::cube(2), {0})), Error);
}

TEST_CASE("dice symmetry and range") {
  const GridSpec s = GridSpec::cube(6);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng r(seed);
    VoxelRegion a{s, std::vector<std::uint8_t>(s.voxel_count())}, b = a;
    const double pa = r.uniform(), pb = r.uniform();
    for (std::size_t i = 0; i < s.voxel_count(); ++i) {
      a.inside[i] = r.uniform() < pa;
      b.inside[i] = r.uniform() < pb;
    }
    const double d = dice(a, b);
    REQUIRE(d == dice(b, a));
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0);
  }
}

TEST_CASE("psnr examples") {
  const GridSpec s = GridSpec::cube(4);
  const auto a = testutil::random_field(s, 1);
  const auto all = full_region(s);
  CHECK(psnr(a, a, all) == 99.0);
  ScalarField3D b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.1;
  CHECK(psnr(a, b, all) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(field_new(s, 0.0), field_new(s, 1.0), all) == 0.0);
  CHECK(psnr(field_new(s, 0.0), field_new(s, 0.1), all) == 20.0);
  try {
    psnr(a, b, region_of(s, {}));
    FAIL("expected EmptyMask");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyMask);
  }
}

TEST_CASE("psnr is shift invariant and masked") {
  const GridSpec s = GridSpec::cube(5);
  const auto a = testutil::random_field(s, 2), b = testutil::random_field(s, 3);
  ScalarField3D a2 = a, b2 = b;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a2[i] += 0.25;
    b2[i] += 0.25;
  }
  const auto mask = region_of(s, {1, 7, 20, 33, 90});
  CHECK(psnr(a2, b2, mask) == doctest::Approx(psnr(a, b, mask)).epsilon(1e-12));
  ScalarField3D c = a;
  c[0] = 5.0;  // outside the mask
  CHECK(psnr(a, c, mask) == 99.0);
}

TEST_CASE("ms-ssim trivial cases") {
  const GridSpec s = GridSpec::cube(16);
  const auto a = testutil::random_field(s, 4);
  MsSsimOptions opt;
  opt.levels = feasible_ms_ssim_levels(s, opt.window);
  CHECK(opt.levels == 2);
  CHECK(ms_ssim(a, a, opt) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(ms_ssim(field_new(s, 0.4), field_new(s, 0.4), opt) == 1.0);
  const auto b = testutil::random_field(s, 5);
  CHECK(ms_ssim(a, b, opt) == ms_ssim(b, a, opt));
  const double v = ms_ssim(a, b, opt);
  CHECK(v >= -1.0);
  CHECK(v <= 1.0);
  opt.levels = 3;
  try {
    ms_ssim(a, b, opt);
    FAIL("expected GridTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GridTooSmall);
  }
  CHECK(ms_ssim(testutil::random_field(GridSpec::cube(28), 1), testutil::random_field(GridSpec::cube(28), 1)) ==
        doctest::Approx(1.0));
}

TEST_CASE("windowed ssim terms match the direct formula") {
  for (GridSpec s : {GridSpec::cube(9), GridSpec{12, 10, 1, 1, 1, 1}}) {
    const auto a = testutil::random_field(s, 10), b = testutil::random_field(s, 11);
    const SsimTerms t = ssim_terms(a, b, MsSsimOptions{});
    const SsimTerms ref = direct_ssim_terms(a, b, 7, 1.5);
    CHECK(t.luminance == doctest::Approx(ref.luminance).epsilon(1e-12));
    CHECK(t.contrast_structure == doctest::Approx(ref.contrast_structure).epsilon(1e-12));
  }
}

TEST_CASE("negated zero-mean field scores below zero") {
  const GridSpec s = GridSpec::cube(16);
  ScalarField3D a = testutil::random_field(s, 12, -0.5, 0.5);
  double mean = field_map_reduce(a, Reduction::Sum) / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= mean;
  ScalarField3D b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = -a[i];
  const SsimTerms ref = direct_ssim_terms(a, b, 7, 1.5);
  CHECK(ref.contrast_structure < 0.0);
  MsSsimOptions opt;
  opt.levels = 2;
  CHECK(ms_ssim(a, b, opt) < 0.0);
}

TEST_CASE("temporal curves preconditions and recomputation") {
  const GridSpec s = GridSpec::cube(6);
  TrajectoryBundle b;
  b.tissue = TissueMap::filled(s, TissueLabel::WhiteMatter);
  b.times = {0.0};
  b.modalities = {Modality::FLAIR};
  b.concentrations = {field_new(s, 0.0)};
  try {
    temporal_curves(b);
    FAIL("expected TooFewTimePoints");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewTimePoints);
  }

  b.times = {0.0, 5.0, 9.0};
  b.concentrations.clear();
  for (int t = 0; t < 3; ++t) {
    ScalarField3D c = field_new(s, 0.0);
    for (int k = 0; k <= t; ++k) c[static_cast<std::size_t>(40 + k)] = 0.7;
    b.concentrations.push_back(c);
    TrajectoryEntry e;
    e.t_days = b.times[static_cast<std::size_t>(t)];
    e.volume = testutil::random_field(s, static_cast<std::uint64_t>(t));
    e.derived_mask = concentration_to_mask(c);
    b.entries.push_back(e);
  }
  const auto rows = temporal_curves(b);
  REQUIRE(rows.size() == 3);
  CHECK_FALSE(rows[0].psnr.has_value());
  for (const auto& r : rows) CHECK(r.dice == 1.0);
  const auto region = nontumor_region(b.tissue, concentration_to_mask(b.concentrations[1]).whole_tumor(),
                                      concentration_to_mask(b.concentrations[2]).whole_tumor());
  CHECK(region.count() == s.voxel_count() - 3);
  CHECK(*rows[2].psnr == psnr(b.entries[1].volume, b.entries[2].volume, region));
}

}  // TEST_SUITE
