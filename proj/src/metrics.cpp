#include "tfk/metrics.hpp"

#include <array>
#include <cmath>
#include <string>

#include "tfk/error.hpp"
#include "tfk/growth.hpp"

namespace tfk {

double dice(const VoxelRegion& a, const VoxelRegion& b) {
  require_same_grid(a.spec, b.spec, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.inside.size(); ++i) {
    na += a.inside[i];
    nb += b.inside[i];
    both += a.inside[i] & b.inside[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dice(const LabelMask& a, const LabelMask& b) { return dice(a.whole_tumor(), b.whole_tumor()); }

double psnr(const ScalarField3D& a, const ScalarField3D& b, const VoxelRegion& mask, double data_max) {
  require_same_grid(a.spec(), b.spec(), "psnr");
  require_same_grid(a.spec(), mask.spec, "psnr mask");
  if (!(data_max > 0.0)) throw Error(ErrorCode::InvalidConfig, "psnr data_max must be positive");
  std::vector<double> sq;
  sq.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask.inside[i]) continue;
    const double d = a[i] - b[i];
    sq.push_back(d * d);
  }
  if (sq.empty()) throw Error(ErrorCode::EmptyMask, "psnr over an empty mask");
  const double mse = pairwise_sum(sq) / static_cast<double>(sq.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_max * data_max / mse));
}

VoxelRegion full_region(const GridSpec& spec) {
  return {spec, std::vector<std::uint8_t>(spec.voxel_count(), 1)};
}

VoxelRegion brain_region(const TissueMap& tissue) {
  VoxelRegion r{tissue.spec, std::vector<std::uint8_t>(tissue.labels.size(), 0)};
  for (std::size_t i = 0; i < r.inside.size(); ++i) r.inside[i] = tissue.is_brain(i) ? 1 : 0;
  return r;
}

VoxelRegion nontumor_region(const TissueMap& tissue, const VoxelRegion& a, const VoxelRegion& b) {
  require_same_grid(tissue.spec, a.spec, "nontumor_region");
  require_same_grid(tissue.spec, b.spec, "nontumor_region");
  VoxelRegion r = brain_region(tissue);
  for (std::size_t i = 0; i < r.inside.size(); ++i) {
    if (a.inside[i] || b.inside[i]) r.inside[i] = 0;
  }
  return r;
}

namespace {

struct Volume {
  std::array<std::size_t, 3> n{};  // x, y, z
  std::vector<double> v;

  std::size_t idx(std::size_t x, std::size_t y, std::size_t z) const { return x + n[0] * (y + n[1] * z); }
};

Volume to_volume(const ScalarField3D& f) {
  const auto& s = f.spec();
  return {{s.nx, s.ny, s.nz}, std::vector<double>(f.values().begin(), f.values().end())};
}

std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(window));
  const int half = window / 2;
  double total = 0.0;
  for (int k = -half; k <= half; ++k) {
    const double w = std::exp(-0.5 * k * k / (sigma * sigma));
    taps[static_cast<std::size_t>(k + half)] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

// Valid-mode 1D filtering along `axis`; singleton axes pass through.
Volume filter_axis(const Volume& in, const std::vector<double>& taps, int axis) {
  if (in.n[axis] == 1) return in;
  const std::size_t w = taps.size();
  Volume out;
  out.n = in.n;
  out.n[axis] = in.n[axis] - w + 1;
  out.v.assign(out.n[0] * out.n[1] * out.n[2], 0.0);
  std::array<std::size_t, 3> step{1, in.n[0], in.n[0] * in.n[1]};
  for (std::size_t z = 0; z < out.n[2]; ++z) {
    for (std::size_t y = 0; y < out.n[1]; ++y) {
      for (std::size_t x = 0; x < out.n[0]; ++x) {
        const std::size_t base = in.idx(x, y, z);
        double s = 0.0;
        for (std::size_t k = 0; k < w; ++k) s += taps[k] * in.v[base + k * step[axis]];
        out.v[out.idx(x, y, z)] = s;
      }
    }
  }
  return out;
}

Volume window_mean(const Volume& in, const std::vector<double>& taps) {
  return filter_axis(filter_axis(filter_axis(in, taps, 0), taps, 1), taps, 2);
}

Volume product(const Volume& a, const Volume& b) {
  Volume out{a.n, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

Volume pool2(const Volume& in) {
  Volume out;
  for (int a = 0; a < 3; ++a) out.n[a] = in.n[a] == 1 ? 1 : in.n[a] / 2;
  out.v.assign(out.n[0] * out.n[1] * out.n[2], 0.0);
  const std::size_t fx = in.n[0] == 1 ? 1 : 2, fy = in.n[1] == 1 ? 1 : 2, fz = in.n[2] == 1 ? 1 : 2;
  const double inv = 1.0 / static_cast<double>(fx * fy * fz);
  for (std::size_t z = 0; z < out.n[2]; ++z)
    for (std::size_t y = 0; y < out.n[1]; ++y)
      for (std::size_t x = 0; x < out.n[0]; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < fz; ++k)
          for (std::size_t j = 0; j < fy; ++j)
            for (std::size_t i = 0; i < fx; ++i) s += in.v[in.idx(fx * x + i, fy * y + j, fz * z + k)];
        out.v[out.idx(x, y, z)] = s * inv;
      }
  return out;
}

bool window_fits(const std::array<std::size_t, 3>& n, int window) {
  for (std::size_t len : n) {
    if (len != 1 && len < static_cast<std::size_t>(window)) return false;
  }
  return true;
}

SsimTerms terms(const Volume& a, const Volume& b, const MsSsimOptions& opt) {
  if (!window_fits(a.n, opt.window)) throw Error(ErrorCode::GridTooSmall, "grid narrower than SSIM window");
  const auto taps = gaussian_taps(opt.window, opt.sigma);
  const Volume mu_a = window_mean(a, taps);
  const Volume mu_b = window_mean(b, taps);
  const Volume e_aa = window_mean(product(a, a), taps);
  const Volume e_bb = window_mean(product(b, b), taps);
  const Volume e_ab = window_mean(product(a, b), taps);
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  std::vector<double> lum(mu_a.v.size()), cs(mu_a.v.size());
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma;
    const double vb = e_bb.v[i] - mb * mb;
    const double cov = e_ab.v[i] - ma * mb;
    lum[i] = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    cs[i] = (2.0 * cov + c2) / (va + vb + c2);
  }
  const double count = static_cast<double>(lum.size());
  return {pairwise_sum(lum) / count, pairwise_sum(cs) / count};
}


constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

}  // namespace

SsimTerms ssim_terms(const ScalarField3D& a, const ScalarField3D& b, const MsSsimOptions& opt) {
  require_same_grid(a.spec(), b.spec(), "ssim");
  return terms(to_volume(a), to_volume(b), opt);
}

int feasible_ms_ssim_levels(const GridSpec& spec, int window, int max_levels) {
  std::array<std::size_t, 3> n{spec.nx, spec.ny, spec.nz};
  int levels = 0;
  while (levels < max_levels && window_fits(n, window)) {
    ++levels;
    for (auto& len : n) len = len == 1 ? 1 : len / 2;
  }
  return levels;
}

double ms_ssim(const ScalarField3D& a, const ScalarField3D& b, const MsSsimOptions& opt) {
  require_same_grid(a.spec(), b.spec(), "ms_ssim");
  if (opt.levels < 1 || opt.levels > static_cast<int>(kScaleWeights.size())) {
    throw Error(ErrorCode::InvalidConfig, "ms_ssim levels must be in [1, 5]");
  }
  if (opt.window < 1 || opt.window % 2 == 0) throw Error(ErrorCode::InvalidConfig, "window must be odd");
  if (feasible_ms_ssim_levels(a.spec(), opt.window, opt.levels) < opt.levels) {
    throw Error(ErrorCode::GridTooSmall, "grid too small for " + std::to_string(opt.levels) +
                                             " scales with window " + std::to_string(opt.window));
  }
  double weight_total = 0.0;
  for (int j = 0; j < opt.levels; ++j) weight_total += kScaleWeights[j];

  // Fractional powers of negative terms are undefined, so the product runs on
  // magnitudes and the result is negative if any scale is anti-correlated.
  Volume va = to_volume(a), vb = to_volume(b);
  double value = 1.0;
  bool negative = false;
  for (int j = 0; j < opt.levels; ++j) {
    const double w = kScaleWeights[j] / weight_total;
    const SsimTerms t = terms(va, vb, opt);
    value *= std::pow(std::abs(t.contrast_structure), w);
    negative = negative || t.contrast_structure < 0.0;
    if (j + 1 == opt.levels) {
      value *= std::pow(std::abs(t.luminance), w);
      negative = negative || t.luminance < 0.0;
    } else {
      va = pool2(va);
      vb = pool2(vb);
    }
  }
  return negative ? -value : value;
}

std::vector<TemporalRow> temporal_curves(const TrajectoryBundle& bundle) {
  if (bundle.times.size() < 2) {
    throw Error(ErrorCode::TooFewTimePoints, "temporal curves need at least two time points");
  }
  std::vector<VoxelRegion> cond_regions;
  for (const auto& c : bundle.concentrations) cond_regions.push_back(concentration_to_mask(c).whole_tumor());

  std::vector<TemporalRow> rows;
  for (std::size_t t = 0; t < bundle.times.size(); ++t) {
    for (std::size_t m = 0; m < bundle.modalities.size(); ++m) {
      const auto& e = bundle.entry(t, m);
      TemporalRow row{bundle.times[t], bundle.modalities[m], dice(e.derived_mask.whole_tumor(), cond_regions[t]),
                      std::nullopt};
      if (t > 0) {
        const auto region = nontumor_region(bundle.tissue, cond_regions[t - 1], cond_regions[t]);
        row.psnr = psnr(bundle.entry(t - 1, m).volume, e.volume, region);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace tfk
