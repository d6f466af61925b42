#include "tfk/growth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>

#include "tfk/error.hpp"
#include "tfk/metrics.hpp"
#include "tfk/parallel.hpp"

namespace tfk {

void GrowthParams::validate() const {
  if (!(rho > 0.0)) throw Error(ErrorCode::InvalidParams, "rho must be > 0");
  if (!(d_white > 0.0)) throw Error(ErrorCode::InvalidParams, "d_white must be > 0");
  if (!(gray_ratio > 0.0 && gray_ratio <= 1.0)) throw Error(ErrorCode::InvalidParams, "gray_ratio must be in (0, 1]");
  if (!(seed_amplitude > 0.0 && seed_amplitude <= 1.0)) {
    throw Error(ErrorCode::InvalidParams, "seed_amplitude must be in (0, 1]");
  }
  if (!(seed_sigma > 0.0)) throw Error(ErrorCode::InvalidParams, "seed_sigma must be > 0");
}

void SimClock::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::InvalidClock, "dt must be > 0");
  if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw Error(ErrorCode::InvalidClock, "t_end must be >= 0");
  if (!(snapshot_every > 0.0)) throw Error(ErrorCode::InvalidClock, "snapshot_every must be > 0");
}

double stable_dt_bound(const GridSpec& spec, double d_max) {
  if (d_max <= 0.0) return std::numeric_limits<double>::infinity();
  const double h = spec.min_spacing();
  return 0.9 * h * h / (6.0 * d_max);
}

void ThresholdPolicy::validate() const {
  const bool ok = background_below > 0.0 && background_below <= edema_low && edema_low < edema_high &&
                  edema_high <= enhancing_at_or_above && enhancing_at_or_above <= 1.0 &&
                  edema_low == background_below && edema_high == enhancing_at_or_above;
  if (!ok) throw Error(ErrorCode::InvalidConfig, "inconsistent threshold policy");
}

ScalarField3D diffusion_map(const TissueMap& tissue, const GrowthParams& params) {
  ScalarField3D d = field_new(tissue.spec, 0.0);
  for (std::size_t i = 0; i < tissue.labels.size(); ++i) {
    switch (tissue.labels[i]) {
      case TissueLabel::WhiteMatter: d[i] = params.d_white; break;
      case TissueLabel::GrayMatter: d[i] = params.gray_ratio * params.d_white; break;
      default: break;
    }
  }
  return d;
}

ScalarField3D seed_initial(const TissueMap& tissue, const GrowthParams& params) {
  const auto& s = tissue.spec;
  const auto& c = params.seed_center;
  const std::array<std::size_t, 3> n{s.nx, s.ny, s.nz};
  std::array<std::size_t, 3> nearest{};
  for (int a = 0; a < 3; ++a) {
    const double r = std::round(c[a]);
    if (!(r >= 0.0 && r < static_cast<double>(n[a]))) {
      throw Error(ErrorCode::SeedOutsideBrain, "seed center outside the grid");
    }
    nearest[a] = static_cast<std::size_t>(r);
  }
  if (!tissue.is_parenchyma(s.index(nearest[0], nearest[1], nearest[2]))) {
    throw Error(ErrorCode::SeedOutsideBrain, "seed center is not on gray or white matter");
  }

  ScalarField3D c0 = field_new(s, 0.0);
  const double inv_two_var = 1.0 / (2.0 * params.seed_sigma * params.seed_sigma);
  for (std::size_t z = 0; z < s.nz; ++z)
    for (std::size_t y = 0; y < s.ny; ++y)
      for (std::size_t x = 0; x < s.nx; ++x) {
        const std::size_t i = s.index(x, y, z);
        if (!tissue.is_parenchyma(i)) continue;
        const double ex = (static_cast<double>(x) - c[0]) * s.dx;
        const double ey = (static_cast<double>(y) - c[1]) * s.dy;
        const double ez = (static_cast<double>(z) - c[2]) * s.dz;
        c0[i] = std::clamp(params.seed_amplitude * std::exp(-(ex * ex + ey * ey + ez * ez) * inv_two_var), 0.0, 1.0);
      }
  return c0;
}

namespace {

double peak_parenchyma_diffusivity(const ScalarField3D& dmap, const TissueMap& tissue) {
  double d_max = 0.0;
  for (std::size_t i = 0; i < dmap.size(); ++i) {
    if (tissue.is_parenchyma(i)) d_max = std::max(d_max, dmap[i]);
  }
  return d_max;
}

void check_stable(const GridSpec& spec, double d_max, double dt) {
  const double bound = stable_dt_bound(spec, d_max);
  if (!(dt > 0.0) || dt > bound * (1.0 + 1e-12)) {
    throw Error(ErrorCode::UnstableTimestep,
                "dt " + std::to_string(dt) + " exceeds stability bound " + std::to_string(bound));
  }
}

// Step without the stability check; callers validate once per run.
void step_into(const ScalarField3D& c, const ScalarField3D& dmap, const TissueMap& tissue, double rho,
               double dt, ScalarField3D& out) {
  const GridSpec& s = c.spec();
  const double ix2 = 1.0 / (s.dx * s.dx), iy2 = 1.0 / (s.dy * s.dy), iz2 = 1.0 / (s.dz * s.dz);
  const std::size_t sx = 1, sy = s.nx, sz = s.nx * s.ny;

  parallel_for(s.nz, [&](std::size_t z) {
    for (std::size_t y = 0; y < s.ny; ++y) {
      for (std::size_t x = 0; x < s.nx; ++x) {
        const std::size_t i = s.index(x, y, z);
        if (!tissue.is_parenchyma(i)) {
          out[i] = 0.0;
          continue;
        }
        const double ci = c[i];
        const double di = dmap[i];
        double div = 0.0;
        auto face = [&](std::size_t j, double inv_h2) {
          if (!tissue.is_parenchyma(j)) return;
          const double dj = dmap[j];
          const double sum = di + dj;
          if (sum <= 0.0) return;
          const double d_face = 2.0 * di * dj / sum;
          div += d_face * (c[j] - ci) * inv_h2;
        };
        if (x > 0) face(i - sx, ix2);
        if (x + 1 < s.nx) face(i + sx, ix2);
        if (y > 0) face(i - sy, iy2);
        if (y + 1 < s.ny) face(i + sy, iy2);
        if (z > 0) face(i - sz, iz2);
        if (z + 1 < s.nz) face(i + sz, iz2);
        const double next = ci + dt * (div + rho * ci * (1.0 - ci));
        out[i] = std::clamp(next, 0.0, 1.0);
      }
    }
  });
}

}  // namespace

ScalarField3D fk_step(const ScalarField3D& c, const ScalarField3D& dmap, const TissueMap& tissue,
                      double rho, double dt) {
  require_same_grid(c.spec(), dmap.spec(), "fk_step diffusion map");
  require_same_grid(c.spec(), tissue.spec, "fk_step tissue");
  check_stable(c.spec(), peak_parenchyma_diffusivity(dmap, tissue), dt);
  ScalarField3D out = field_new(c.spec(), 0.0);
  step_into(c, dmap, tissue, rho, dt, out);
  return out;
}

std::vector<Snapshot> simulate_at(const TissueMap& tissue, const GrowthParams& params,
                                  const std::vector<double>& times, double dt) {
  params.validate();
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidClock, "dt must be > 0");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] >= 0.0) || (k > 0 && !(times[k] > times[k - 1]))) {
      throw Error(ErrorCode::InvalidClock, "snapshot times must be ascending and >= 0");
    }
  }
  const ScalarField3D dmap = diffusion_map(tissue, params);
  check_stable(tissue.spec, peak_parenchyma_diffusivity(dmap, tissue), dt);

  ScalarField3D cur = seed_initial(tissue, params);
  ScalarField3D next = cur;
  double t = 0.0;
  std::vector<Snapshot> out;
  out.reserve(times.size());
  for (double target : times) {
    const double remaining = target - t;
    if (remaining > 0.0) {
      const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(remaining / dt - 1e-9)));
      for (std::size_t k = 0; k < steps; ++k) {
        const double h = (k + 1 < steps) ? dt : remaining - static_cast<double>(steps - 1) * dt;
        step_into(cur, dmap, tissue, params.rho, h, next);
        std::swap(cur, next);
      }
      t = target;
    }
    out.push_back({target, cur});
  }
  return out;
}

std::vector<Snapshot> simulate(const TissueMap& tissue, const GrowthParams& params, const SimClock& clock) {
  clock.validate();
  std::vector<double> times;
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * clock.snapshot_every;
    if (t >= clock.t_end - 1e-9 * clock.snapshot_every) break;
    times.push_back(t);
  }
  times.push_back(clock.t_end);
  return simulate_at(tissue, params, times, clock.dt);
}

LabelMask concentration_to_mask(const ScalarField3D& c, const ThresholdPolicy& policy) {
  policy.validate();
  LabelMask mask(c.spec(), std::vector<MaskLabel>(c.size(), MaskLabel::Background));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = c[i];
    if (v >= policy.enhancing_at_or_above) {
      mask.labels[i] = MaskLabel::Enhancing;
    } else if (v >= policy.edema_low && v < policy.edema_high) {
      mask.labels[i] = MaskLabel::Edema;
    }
  }
  return mask;
}

namespace {

// Smallest positive gap between distinct sorted values; `fallback` if none.
double grid_spacing(std::vector<double> values, double fallback) {
  std::sort(values.begin(), values.end());
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < values.size(); ++k) {
    const double d = values[k] - values[k - 1];
    if (d > 0.0) gap = std::min(gap, d);
  }
  return std::isfinite(gap) ? gap : fallback;
}

}  // namespace

FitResult fit_growth_params(const LabelMask& target, const TissueMap& tissue, const FitSearchGrid& search,
                            const SimClock& clock) {
  require_same_grid(target.spec, tissue.spec, "fit_growth_params");
  const VoxelRegion target_region = target.whole_tumor();
  if (target_region.count() == 0) throw Error(ErrorCode::EmptyTarget, "target mask has no tumor voxels");
  if (search.rho.empty() || search.d_white.empty() || search.seed_centers.empty()) {
    throw Error(ErrorCode::EmptySearchGrid, "every search axis needs at least one value");
  }
  clock.validate();

  // Invalid candidates (unstable dt, seed off the brain, out-of-range values)
  // score -1 so they never win.
  auto score = [&](const GrowthParams& p) -> double {
    try {
      const auto snaps = simulate_at(tissue, p, {clock.t_end}, clock.dt);
      return dice(concentration_to_mask(snaps.back().concentration).whole_tumor(), target_region);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::UnstableTimestep:
        case ErrorCode::SeedOutsideBrain:
        case ErrorCode::InvalidParams:
          return -1.0;
        default:
          throw;
      }
    }
  };

  // Lexicographic enumeration order doubles as the tie-break order.
  std::vector<GrowthParams> candidates;
  for (double rho : search.rho)
    for (double d : search.d_white)
      for (const auto& seed : search.seed_centers) {
        GrowthParams p = search.base;
        p.rho = rho;
        p.d_white = d;
        p.seed_center = seed;
        candidates.push_back(p);
      }
  std::sort(candidates.begin(), candidates.end(), [](const GrowthParams& a, const GrowthParams& b) {
    return std::tie(a.rho, a.d_white, a.seed_center) < std::tie(b.rho, b.d_white, b.seed_center);
  });

  std::vector<double> scores(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t k) { scores[k] = score(candidates[k]); });

  FitResult result;
  result.evaluations = candidates.size();
  std::size_t best = 0;
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  if (scores[best] < 0.0) throw Error(ErrorCode::EmptySearchGrid, "no valid parameter set in the search grid");
  result.grid_params = candidates[best];
  result.grid_dice = scores[best];

  std::array<double, 5> steps{};
  steps[0] = grid_spacing(search.rho, 0.25 * result.grid_params.rho);
  steps[1] = grid_spacing(search.d_white, 0.25 * result.grid_params.d_white);
  for (int a = 0; a < 3; ++a) {
    std::vector<double> axis;
    for (const auto& s : search.seed_centers) axis.push_back(s[a]);
    steps[2 + a] = grid_spacing(axis, 1.0);
  }
  auto coordinate = [](GrowthParams& p, int k) -> double& {
    if (k == 0) return p.rho;
    if (k == 1) return p.d_white;
    return p.seed_center[k - 2];
  };

  GrowthParams current = result.grid_params;
  double current_dice = result.grid_dice;
  for (int k = 0; k < 5; ++k) {
    double step = 0.5 * steps[k];
    for (int halving = 0; halving < 3; ++halving, step *= 0.5) {
      for (double sign : {1.0, -1.0}) {
        GrowthParams trial = current;
        coordinate(trial, k) += sign * step;
        const double s = score(trial);
        ++result.evaluations;
        if (s > current_dice) {
          current = trial;
          current_dice = s;
          break;
        }
      }
    }
  }
  result.params = current;
  result.fit_dice = current_dice;
  return result;
}

}  // namespace tfk
