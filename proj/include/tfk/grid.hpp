#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tfk {

/// Voxel counts and spacing (mm) of a regular grid. Storage everywhere is
/// row-major with x fastest and z slowest: index = x + nx * (y + ny * z).
struct GridSpec {
  std::size_t nx = 1, ny = 1, nz = 1;
  double dx = 1.0, dy = 1.0, dz = 1.0;

  static GridSpec cube(std::size_t n, double spacing = 1.0) {
    return {n, n, n, spacing, spacing, spacing};
  }

  /// Throws Error(InvalidSpec) on zero dimensions, non-positive spacing or a
  /// voxel count that overflows size_t.
  void validate() const;

  std::size_t voxel_count() const { return nx * ny * nz; }
  double min_spacing() const;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + nx * (y + ny * z);
  }
  std::array<std::size_t, 3> coords(std::size_t i) const {
    return {i % nx, (i / nx) % ny, i / (nx * ny)};
  }

  bool operator==(const GridSpec&) const = default;
};

/// Throws Error(ShapeMismatch) unless the two specs are identical.
void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what);

class ScalarField3D {
 public:
  ScalarField3D() = default;
  ScalarField3D(GridSpec spec, std::vector<double> values);

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return values_[spec_.index(x, y, z)]; }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return values_[spec_.index(x, y, z)]; }

  /// True if every value lies in [0, 1].
  bool is_concentration() const;

  bool operator==(const ScalarField3D&) const = default;

 private:
  GridSpec spec_;
  std::vector<double> values_;
};

ScalarField3D field_new(const GridSpec& spec, double fill);

enum class TissueLabel : std::uint8_t { Background = 0, CSF = 1, GrayMatter = 2, WhiteMatter = 3 };

struct TissueMap {
  GridSpec spec;
  std::vector<TissueLabel> labels;

  TissueMap() = default;
  TissueMap(GridSpec s, std::vector<TissueLabel> l);
  static TissueMap filled(const GridSpec& s, TissueLabel label);

  bool is_brain(std::size_t i) const { return labels[i] != TissueLabel::Background; }
  bool is_parenchyma(std::size_t i) const {
    return labels[i] == TissueLabel::GrayMatter || labels[i] == TissueLabel::WhiteMatter;
  }
};

enum class MaskLabel : std::uint8_t { Background = 0, Edema = 1, Enhancing = 2 };

/// Binary voxel set on a grid.
struct VoxelRegion {
  GridSpec spec;
  std::vector<std::uint8_t> inside;

  std::size_t count() const;
};

struct LabelMask {
  GridSpec spec;
  std::vector<MaskLabel> labels;

  LabelMask() = default;
  LabelMask(GridSpec s, std::vector<MaskLabel> l);

  /// Union of Edema and Enhancing.
  VoxelRegion whole_tumor() const;
};

/// Channel-major stack of C fields on one grid; used for data, noise and
/// velocity tensors.
struct FieldStack {
  GridSpec spec;
  std::size_t channels = 0;
  std::vector<double> values;

  FieldStack() = default;
  FieldStack(const GridSpec& s, std::size_t c, double fill = 0.0)
      : spec(s), channels(c), values(s.voxel_count() * c, fill) {}

  std::size_t voxels() const { return spec.voxel_count(); }
  std::span<double> channel(std::size_t c) { return {values.data() + c * voxels(), voxels()}; }
  std::span<const double> channel(std::size_t c) const {
    return {values.data() + c * voxels(), voxels()};
  }

  static FieldStack from_field(const ScalarField3D& f);
  ScalarField3D to_field(std::size_t c = 0) const;

  bool same_shape(const FieldStack& o) const { return spec == o.spec && channels == o.channels; }
  bool operator==(const FieldStack&) const = default;
};

/// Pairwise (tree) summation with a fixed split order. Bitwise reproducible and
/// O(log n) error growth.
double pairwise_sum(std::span<const double> xs);

enum class Reduction { Sum, Max, Min };

/// Sum uses pairwise_sum; Max and Min return -inf / +inf for empty fields.
double field_map_reduce(const ScalarField3D& field, Reduction op);

}  // namespace tfk
