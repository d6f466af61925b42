#include "tfk/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tfk/error.hpp"

namespace tfk {

void GridSpec::validate() const {
  if (nx == 0 || ny == 0 || nz == 0) {
    throw Error(ErrorCode::InvalidSpec, "grid dimensions must be >= 1");
  }
  if (!(dx > 0.0) || !(dy > 0.0) || !(dz > 0.0) || !std::isfinite(dx) || !std::isfinite(dy) ||
      !std::isfinite(dz)) {
    throw Error(ErrorCode::InvalidSpec, "grid spacing must be positive and finite");
  }
  constexpr auto kMax = std::numeric_limits<std::size_t>::max();
  if (nx > kMax / ny || nx * ny > kMax / nz) {
    throw Error(ErrorCode::InvalidSpec, "voxel count overflows the index range");
  }
}

double GridSpec::min_spacing() const { return std::min({dx, dy, dz}); }

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": grid specs differ");
}

ScalarField3D::ScalarField3D(GridSpec spec, std::vector<double> values)
    : spec_(spec), values_(std::move(values)) {
  spec_.validate();
  if (values_.size() != spec_.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "value count does not match grid");
  }
}

bool ScalarField3D::is_concentration() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

ScalarField3D field_new(const GridSpec& spec, double fill) {
  spec.validate();
  return ScalarField3D(spec, std::vector<double>(spec.voxel_count(), fill));
}

TissueMap::TissueMap(GridSpec s, std::vector<TissueLabel> l) : spec(s), labels(std::move(l)) {
  spec.validate();
  if (labels.size() != spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "tissue label count does not match grid");
  }
}

TissueMap TissueMap::filled(const GridSpec& s, TissueLabel label) {
  s.validate();
  return TissueMap(s, std::vector<TissueLabel>(s.voxel_count(), label));
}

std::size_t VoxelRegion::count() const {
  return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
}

LabelMask::LabelMask(GridSpec s, std::vector<MaskLabel> l) : spec(s), labels(std::move(l)) {
  spec.validate();
  if (labels.size() != spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "mask label count does not match grid");
  }
}

VoxelRegion LabelMask::whole_tumor() const {
  VoxelRegion r{spec, std::vector<std::uint8_t>(labels.size(), 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    r.inside[i] = labels[i] != MaskLabel::Background ? 1 : 0;
  }
  return r;
}

FieldStack FieldStack::from_field(const ScalarField3D& f) {
  FieldStack s;
  s.spec = f.spec();
  s.channels = 1;
  s.values.assign(f.values().begin(), f.values().end());
  return s;
}

ScalarField3D FieldStack::to_field(std::size_t c) const {
  auto ch = channel(c);
  return ScalarField3D(spec, std::vector<double>(ch.begin(), ch.end()));
}

double pairwise_sum(std::span<const double> xs) {
  constexpr std::size_t kLeaf = 8;
  if (xs.size() <= kLeaf) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

double field_map_reduce(const ScalarField3D& field, Reduction op) {
  auto v = field.values();
  switch (op) {
    case Reduction::Sum:
      return pairwise_sum(v);
    case Reduction::Max: {
      double m = -std::numeric_limits<double>::infinity();
      for (double x : v) m = std::max(m, x);
      return m;
    }
    case Reduction::Min: {
      double m = std::numeric_limits<double>::infinity();
      for (double x : v) m = std::min(m, x);
      return m;
    }
  }
  return 0.0;
}

}  // namespace tfk
