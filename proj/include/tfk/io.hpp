#pragma once

// On-disk formats.
//
// Raw volumes are a headerless payload (little-endian f32 or u8, x fastest,
// z slowest) next to a JSON sidecar with the same stem:
//
//   conc_t10.f32 + conc_t10.json
//   {"schema_version": 1, "nx": .., "ny": .., "nz": .., "dx": .., "dy": ..,
//    "dz": .., "dtype": "f32le", "order": "zyx", "intent": "concentration"}
//
// Values are stored as f32, so a write/read round trip is bitwise exact for
// fields whose values are f32-representable (and always idempotent after the
// first round trip).

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tfk/grid.hpp"

namespace tfk {

enum class Dtype { F32LE, U8 };
enum class VolumeIntent { Concentration, Image, Tissue, Mask };

struct VolumeHeader {
  GridSpec spec;
  Dtype dtype = Dtype::F32LE;
  std::optional<VolumeIntent> intent;
  /// Image intents: stored values are mapped (v - min) / (max - min) on read.
  std::optional<std::pair<double, double>> rescale;
};

using Volume = std::variant<ScalarField3D, TissueMap, LabelMask>;

std::filesystem::path sidecar_path(const std::filesystem::path& payload);

VolumeHeader read_volume_header(const std::filesystem::path& payload);

/// Throws MissingSidecar, SizeMismatch (checked against the file size before
/// any allocation) or UnknownDtype.
Volume read_volume(const std::filesystem::path& payload);

/// Typed readers; a tissue or mask volume read as a field is converted to its
/// label codes.
ScalarField3D read_field(const std::filesystem::path& payload);
TissueMap read_tissue(const std::filesystem::path& payload);
LabelMask read_mask(const std::filesystem::path& payload);

void write_field(const std::filesystem::path& payload, const ScalarField3D& field,
                 VolumeIntent intent = VolumeIntent::Concentration);
void write_tissue(const std::filesystem::path& payload, const TissueMap& tissue);
void write_mask(const std::filesystem::path& payload, const LabelMask& mask);

struct NiftiVolume {
  ScalarField3D field;
  std::vector<std::string> warnings;
};

/// Single-file NIfTI-1 (.nii) reader for float32 and uint8 data, either byte
/// order. Spacing comes from pixdim; orientation fields are ignored with a
/// warning. Throws BadMagic or UnsupportedDatatype.
NiftiVolume read_nifti_subset(const std::filesystem::path& path);

/// Parses a JSON config and requires "schema_version": 1.
nlohmann::json read_config(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace tfk
