#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tfk/grid.hpp"
#include "tfk/rng.hpp"

namespace testutil {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tfk_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline tfk::ScalarField3D random_field(const tfk::GridSpec& spec, std::uint64_t seed, double lo = 0.0,
                                       double hi = 1.0) {
  tfk::ScalarField3D f = tfk::field_new(spec, 0.0);
  tfk::Rng r(seed);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = r.uniform(lo, hi);
  return f;
}

// Random labels with background only on the outer shell, so the brain is one
// connected blob with mixed tissue.
inline tfk::TissueMap random_tissue(const tfk::GridSpec& spec, std::uint64_t seed) {
  tfk::TissueMap t = tfk::TissueMap::filled(spec, tfk::TissueLabel::Background);
  tfk::Rng r(seed, 1);
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    const auto [x, y, z] = spec.coords(i);
    const bool shell = x == 0 || y == 0 || z == 0 || x + 1 == spec.nx || y + 1 == spec.ny || z + 1 == spec.nz;
    if (shell) continue;
    t.labels[i] = static_cast<tfk::TissueLabel>(1 + r.below(3));
  }
  return t;
}

}  // namespace testutil
