#include "tfk/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tfk/error.hpp"
#include "tfk/growth.hpp"
#include "tfk/rng.hpp"

namespace tfk {

const ToyContrast& toy_contrast(Modality m) {
  static const ToyContrast kT1{0.25, 0.55, 0.70, -0.40, -0.10};
  static const ToyContrast kT1c{0.15, 0.40, 0.50, 0.40, 0.10};
  static const ToyContrast kT2{0.85, 0.45, 0.35, 0.45, 0.10};
  static const ToyContrast kFlair{0.10, 0.50, 0.40, 0.45, 0.05};
  switch (m) {
    case Modality::T1: return kT1;
    case Modality::T1c: return kT1c;
    case Modality::T2: return kT2;
    case Modality::FLAIR: return kFlair;
  }
  return kFlair;
}

namespace {

double base_intensity(const ToyContrast& c, TissueLabel t) {
  switch (t) {
    case TissueLabel::CSF: return c.base_csf;
    case TissueLabel::GrayMatter: return c.base_gray;
    case TissueLabel::WhiteMatter: return c.base_white;
    case TissueLabel::Background: return 0.0;
  }
  return 0.0;
}

double ramp(double c) { return std::clamp((c - 0.1) / 0.2, 0.0, 1.0); }
double enhancing(double c) { return std::clamp((c - 0.5) / 0.2, 0.0, 1.0); }

}  // namespace

TissueMap make_phantom(const GridSpec& spec, std::uint64_t seed, double jitter) {
  spec.validate();
  Rng r(seed, 0x9a7a);
  const std::array<std::size_t, 3> n{spec.nx, spec.ny, spec.nz};
  std::array<double, 3> centre{}, radius{}, vcentre{}, vradius{};
  for (int a = 0; a < 3; ++a) {
    const double len = static_cast<double>(n[a]);
    centre[a] = 0.5 * (len - 1.0) + jitter * r.uniform(-0.5, 0.5);
    radius[a] = len * (0.44 + 0.03 * jitter * r.uniform(-1.0, 1.0));
    vradius[a] = len * (0.10 + 0.02 * jitter * r.uniform(-1.0, 1.0));
    vcentre[a] = centre[a] + jitter * r.uniform(-0.5, 0.5);
  }
  vcentre[1] -= 0.12 * static_cast<double>(n[1]);

  TissueMap tissue = TissueMap::filled(spec, TissueLabel::Background);
  const double rim = 1.0 / std::max(1.0, std::min({radius[0], radius[1], radius[2]}));
  for (std::size_t z = 0; z < n[2]; ++z)
    for (std::size_t y = 0; y < n[1]; ++y)
      for (std::size_t x = 0; x < n[0]; ++x) {
        const std::array<double, 3> p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        double q = 0.0, qv = 0.0;
        for (int a = 0; a < 3; ++a) {
          // Singleton axes do not constrain the shape.
          if (n[a] == 1) continue;
          q += std::pow((p[a] - centre[a]) / radius[a], 2);
          qv += std::pow((p[a] - vcentre[a]) / vradius[a], 2);
        }
        const double rr = std::sqrt(q);
        TissueLabel label = TissueLabel::Background;
        if (rr <= 1.0) {
          if (rr > 1.0 - rim) {
            label = TissueLabel::CSF;
          } else if (rr > 0.62) {
            label = TissueLabel::GrayMatter;
          } else {
            label = TissueLabel::WhiteMatter;
          }
          if (qv <= 1.0) label = TissueLabel::CSF;
        }
        tissue.labels[spec.index(x, y, z)] = label;
      }
  return tissue;
}

ScalarField3D texture_field(const TissueMap& tissue, std::uint64_t seed) {
  constexpr int kWaves = 3;
  constexpr double kAmplitude = 0.01;
  Rng r(seed, 0x7e47);
  std::array<std::array<double, 3>, kWaves> k{};
  std::array<double, kWaves> phase{};
  for (int w = 0; w < kWaves; ++w) {
    const double wavelength = r.uniform(5.0, 10.0);
    std::array<double, 3> dir{r.normal(), r.normal(), r.normal()};
    const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
    for (int a = 0; a < 3; ++a) k[w][a] = 2.0 * std::numbers::pi / wavelength * dir[a] / norm;
    phase[w] = r.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const auto& s = tissue.spec;
  ScalarField3D tex = field_new(s, 0.0);
  for (std::size_t i = 0; i < tex.size(); ++i) {
    if (!tissue.is_brain(i)) continue;
    const auto [x, y, z] = s.coords(i);
    double v = 0.0;
    for (int w = 0; w < kWaves; ++w) {
      v += kAmplitude * std::cos(k[w][0] * static_cast<double>(x) + k[w][1] * static_cast<double>(y) +
                                 k[w][2] * static_cast<double>(z) + phase[w]);
    }
    tex[i] = v;
  }
  return tex;
}

ScalarField3D synthesize_image(const TissueMap& tissue, const ScalarField3D& conc, Modality m,
                               const ScalarField3D& texture) {
  require_same_grid(tissue.spec, conc.spec(), "synthesize_image");
  require_same_grid(tissue.spec, texture.spec(), "synthesize_image texture");
  const ToyContrast& c = toy_contrast(m);
  ScalarField3D img = field_new(tissue.spec, 0.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!tissue.is_brain(i)) continue;
    const double v = base_intensity(c, tissue.labels[i]) + texture[i] + c.amp * ramp(conc[i]) +
                     c.extra * enhancing(conc[i]);
    img[i] = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

LabelMask segment_toy(const ScalarField3D& image, const TissueMap& tissue, Modality m) {
  require_same_grid(tissue.spec, image.spec(), "segment_toy");
  const ToyContrast& c = toy_contrast(m);
  const double sign = c.amp < 0.0 ? -1.0 : 1.0;
  const double whole = 0.5 * std::abs(c.amp);
  const double core = std::abs(c.amp) + 0.5 * std::abs(c.extra);
  LabelMask mask(tissue.spec, std::vector<MaskLabel>(image.size(), MaskLabel::Background));
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (!tissue.is_parenchyma(i)) continue;
    const double dev = sign * (image[i] - base_intensity(c, tissue.labels[i]));
    if (dev >= core) {
      mask.labels[i] = MaskLabel::Enhancing;
    } else if (dev >= whole) {
      mask.labels[i] = MaskLabel::Edema;
    }
  }
  return mask;
}

std::array<double, 3> random_white_matter_voxel(const TissueMap& tissue, std::uint64_t seed) {
  std::vector<std::size_t> white;
  for (std::size_t i = 0; i < tissue.labels.size(); ++i) {
    if (tissue.labels[i] == TissueLabel::WhiteMatter) white.push_back(i);
  }
  if (white.empty()) throw Error(ErrorCode::SeedOutsideBrain, "phantom has no white matter");
  Rng r(seed, 0x5eed);
  const auto [x, y, z] = tissue.spec.coords(white[r.below(white.size())]);
  return {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
}

std::vector<PhantomCase> make_toy_cases(const GridSpec& spec, std::uint64_t seed, const ToyDatasetOptions& opt) {
  if (opt.modalities.empty() || opt.snapshots_per_subject == 0) {
    throw Error(ErrorCode::InvalidConfig, "toy dataset needs modalities and snapshots");
  }
  std::vector<PhantomCase> cases;
  cases.reserve(opt.cases);
  for (std::uint64_t subject = 0; cases.size() < opt.cases; ++subject) {
    const std::uint64_t sseed = rng::bits(seed, 0x50b1, subject);
    Rng r(sseed, 1);
    TissueMap tissue = make_phantom(spec, sseed);
    const ScalarField3D texture = texture_field(tissue, sseed);

    GrowthParams gp;
    gp.rho = r.uniform(0.02, 0.05);
    gp.d_white = r.uniform(0.15, 0.40);
    gp.seed_sigma = r.uniform(1.0, 2.0);
    gp.seed_amplitude = r.uniform(0.3, 0.9);
    gp.seed_center = random_white_matter_voxel(tissue, sseed);
    std::vector<double> times;
    for (std::size_t k = 0; k < opt.snapshots_per_subject; ++k) times.push_back(r.uniform(0.0, opt.max_days));
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    const double dt = std::min(0.5, 0.95 * stable_dt_bound(spec, gp.d_white));
    const auto snaps = simulate_at(tissue, gp, times, dt);

    for (const auto& snap : snaps) {
      if (cases.size() == opt.cases) break;
      const Modality m = opt.modalities[r.below(opt.modalities.size())];
      cases.push_back({tissue, snap.concentration, synthesize_image(tissue, snap.concentration, m, texture), m});
    }
  }
  return cases;
}

std::vector<TrainingPair> to_training_pairs(std::span<const PhantomCase> cases) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(cases.size());
  for (const auto& c : cases) {
    pairs.push_back({FieldStack::from_field(c.image), assemble(c.tissue, c.concentration, c.modality)});
  }
  return pairs;
}

}  // namespace tfk
