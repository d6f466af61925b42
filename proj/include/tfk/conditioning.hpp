#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "tfk/grid.hpp"

namespace tfk {

/// Integer codes are serialized into checkpoints and must not change.
enum class Modality : std::uint8_t { T1 = 0, T1c = 1, T2 = 2, FLAIR = 3 };

inline constexpr std::array<Modality, 4> kAllModalities = {Modality::T1, Modality::T1c, Modality::T2,
                                                           Modality::FLAIR};

std::string_view modality_name(Modality m);
/// Case-insensitive; also accepts the integer code as text.
std::optional<Modality> parse_modality(std::string_view name);

/// Spatial conditioning channels, in order: CSF, gray matter, white matter
/// one-hot (all zero outside the brain), then tumor concentration.
inline constexpr std::size_t kConditioningChannels = 4;

struct ConditioningTensor {
  FieldStack channels;  ///< kConditioningChannels channels
  Modality modality = Modality::T1;

  const GridSpec& spec() const { return channels.spec; }
  bool operator==(const ConditioningTensor&) const = default;
};

/// Throws ShapeMismatch when grids differ and ConcentrationOutOfRange when a
/// concentration voxel leaves [0, 1].
ConditioningTensor assemble(const TissueMap& tissue, const ScalarField3D& conc, Modality modality);

}  // namespace tfk
