#include "tfk/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "binary_io.hpp"
#include "tfk/error.hpp"

namespace tfk {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path sidecar_path(const fs::path& payload) {
  fs::path p = payload;
  return p.replace_extension(".json");
}

namespace {

std::string_view intent_name(VolumeIntent i) {
  switch (i) {
    case VolumeIntent::Concentration: return "concentration";
    case VolumeIntent::Image: return "image";
    case VolumeIntent::Tissue: return "tissue";
    case VolumeIntent::Mask: return "mask";
  }
  return "";
}

std::optional<VolumeIntent> parse_intent(const std::string& s) {
  if (s == "concentration") return VolumeIntent::Concentration;
  if (s == "image") return VolumeIntent::Image;
  if (s == "tissue") return VolumeIntent::Tissue;
  if (s == "mask") return VolumeIntent::Mask;
  throw Error(ErrorCode::InvalidConfig, "unknown volume intent '" + s + "'");
}

json sidecar_json(const GridSpec& s, Dtype dtype, VolumeIntent intent) {
  return {{"schema_version", 1},
          {"nx", s.nx},
          {"ny", s.ny},
          {"nz", s.nz},
          {"dx", s.dx},
          {"dy", s.dy},
          {"dz", s.dz},
          {"dtype", dtype == Dtype::F32LE ? "f32le" : "u8"},
          {"order", "zyx"},
          {"intent", intent_name(intent)}};
}

void write_raw(const fs::path& payload, const GridSpec& spec, Dtype dtype, VolumeIntent intent,
               const std::vector<unsigned char>& bytes) {
  spec.validate();
  detail::write_file_atomic(payload, bytes.data(), bytes.size());
  write_json(sidecar_path(payload), sidecar_json(spec, dtype, intent));
}

std::vector<unsigned char> read_payload(const fs::path& payload, const VolumeHeader& h) {
  const std::size_t elem = h.dtype == Dtype::F32LE ? 4 : 1;
  const std::size_t expected = h.spec.voxel_count() * elem;
  std::error_code ec;
  const auto actual = fs::file_size(payload, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot stat " + payload.string());
  if (actual != expected) {
    throw Error(ErrorCode::SizeMismatch, payload.string() + " has " + std::to_string(actual) +
                                             " bytes, sidecar declares " + std::to_string(expected));
  }
  return detail::read_file(payload);
}

}  // namespace

VolumeHeader read_volume_header(const fs::path& payload) {
  const fs::path side = sidecar_path(payload);
  if (!fs::exists(side)) throw Error(ErrorCode::MissingSidecar, "no sidecar " + side.string());
  json j;
  {
    std::ifstream in(side);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, side.string() + ": " + e.what());
    }
  }
  if (j.contains("schema_version") && j["schema_version"] != 1) {
    throw Error(ErrorCode::InvalidConfig, side.string() + ": unsupported schema_version");
  }
  VolumeHeader h;
  try {
    h.spec = {j.at("nx").get<std::size_t>(), j.at("ny").get<std::size_t>(), j.at("nz").get<std::size_t>(),
              j.value("dx", 1.0), j.value("dy", 1.0), j.value("dz", 1.0)};
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "f32le") {
      h.dtype = Dtype::F32LE;
    } else if (dtype == "u8") {
      h.dtype = Dtype::U8;
    } else {
      throw Error(ErrorCode::UnknownDtype, side.string() + ": dtype '" + dtype + "'");
    }
    if (j.value("order", std::string("zyx")) != "zyx") {
      throw Error(ErrorCode::InvalidConfig, side.string() + ": only order \"zyx\" is supported");
    }
    if (j.contains("intent")) h.intent = parse_intent(j["intent"].get<std::string>());
    if (j.contains("rescale")) {
      h.rescale = std::make_pair(j["rescale"].at("min").get<double>(), j["rescale"].at("max").get<double>());
      if (!(h.rescale->second > h.rescale->first)) throw Error(ErrorCode::InvalidConfig, "rescale needs max > min");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, side.string() + ": " + e.what());
  }
  h.spec.validate();
  return h;
}

Volume read_volume(const fs::path& payload) {
  const VolumeHeader h = read_volume_header(payload);
  const auto bytes = read_payload(payload, h);
  const std::size_t n = h.spec.voxel_count();

  if (h.dtype == Dtype::U8 && h.intent == VolumeIntent::Tissue) {
    std::vector<TissueLabel> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (bytes[i] > 3) throw Error(ErrorCode::InvalidConfig, "tissue label out of range");
      labels[i] = static_cast<TissueLabel>(bytes[i]);
    }
    return TissueMap(h.spec, std::move(labels));
  }
  if (h.dtype == Dtype::U8 && h.intent == VolumeIntent::Mask) {
    std::vector<MaskLabel> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (bytes[i] > 2) throw Error(ErrorCode::InvalidConfig, "mask label out of range");
      labels[i] = static_cast<MaskLabel>(bytes[i]);
    }
    return LabelMask(h.spec, std::move(labels));
  }

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = h.dtype == Dtype::F32LE ? static_cast<double>(detail::get_le<float>(bytes.data() + 4 * i))
                                        : static_cast<double>(bytes[i]);
  }
  if (h.rescale && h.intent.value_or(VolumeIntent::Image) == VolumeIntent::Image) {
    const auto [lo, hi] = *h.rescale;
    for (double& v : values) v = (v - lo) / (hi - lo);
  }
  return ScalarField3D(h.spec, std::move(values));
}

namespace {

template <typename Out, typename Label>
std::vector<Out> label_codes(const std::vector<Label>& labels) {
  std::vector<Out> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = static_cast<Out>(static_cast<std::uint8_t>(labels[i]));
  return out;
}

}  // namespace

ScalarField3D read_field(const fs::path& payload) {
  Volume v = read_volume(payload);
  if (auto* f = std::get_if<ScalarField3D>(&v)) return std::move(*f);
  if (auto* t = std::get_if<TissueMap>(&v)) {
    return ScalarField3D(t->spec, label_codes<double>(t->labels));
  }
  const auto& m = std::get<LabelMask>(v);
  return ScalarField3D(m.spec, label_codes<double>(m.labels));
}

TissueMap read_tissue(const fs::path& payload) {
  Volume v = read_volume(payload);
  if (auto* t = std::get_if<TissueMap>(&v)) return std::move(*t);
  // Accept label codes stored without a tissue intent.
  const ScalarField3D f = std::holds_alternative<ScalarField3D>(v)
                              ? std::get<ScalarField3D>(v)
                              : ScalarField3D(std::get<LabelMask>(v).spec, label_codes<double>(std::get<LabelMask>(v).labels));
  std::vector<TissueLabel> labels(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double c = f[i];
    if (!(c >= 0.0 && c <= 3.0) || c != std::floor(c)) {
      throw Error(ErrorCode::InvalidConfig, payload.string() + " does not hold tissue labels");
    }
    labels[i] = static_cast<TissueLabel>(static_cast<int>(c));
  }
  return TissueMap(f.spec(), std::move(labels));
}

LabelMask read_mask(const fs::path& payload) {
  Volume v = read_volume(payload);
  if (auto* m = std::get_if<LabelMask>(&v)) return std::move(*m);
  const ScalarField3D f = std::holds_alternative<ScalarField3D>(v)
                              ? std::get<ScalarField3D>(v)
                              : ScalarField3D(std::get<TissueMap>(v).spec, label_codes<double>(std::get<TissueMap>(v).labels));
  std::vector<MaskLabel> labels(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double c = f[i];
    if (!(c >= 0.0 && c <= 2.0) || c != std::floor(c)) {
      throw Error(ErrorCode::InvalidConfig, payload.string() + " does not hold mask labels");
    }
    labels[i] = static_cast<MaskLabel>(static_cast<int>(c));
  }
  return LabelMask(f.spec(), std::move(labels));
}

void write_field(const fs::path& payload, const ScalarField3D& field, VolumeIntent intent) {
  std::vector<unsigned char> bytes;
  bytes.reserve(field.size() * 4);
  for (double v : field.values()) detail::put_le<float>(bytes, static_cast<float>(v));
  write_raw(payload, field.spec(), Dtype::F32LE, intent, bytes);
}

void write_tissue(const fs::path& payload, const TissueMap& tissue) {
  const auto bytes = label_codes<unsigned char>(tissue.labels);
  write_raw(payload, tissue.spec, Dtype::U8, VolumeIntent::Tissue, bytes);
}

void write_mask(const fs::path& payload, const LabelMask& mask) {
  const auto bytes = label_codes<unsigned char>(mask.labels);
  write_raw(payload, mask.spec, Dtype::U8, VolumeIntent::Mask, bytes);
}

NiftiVolume read_nifti_subset(const fs::path& path) {
  constexpr std::size_t kHeaderSize = 348;
  const auto bytes = detail::read_file(path);
  if (bytes.size() < kHeaderSize + 4) throw Error(ErrorCode::BadMagic, path.string() + " is too short for NIfTI-1");
  if (!(bytes[344] == 'n' && bytes[345] == '+' && bytes[346] == '1' && bytes[347] == '\0')) {
    throw Error(ErrorCode::BadMagic, path.string() + " lacks the single-file NIfTI-1 magic \"n+1\"");
  }

  bool swap = false;
  const auto sizeof_hdr = detail::get_le<std::int32_t>(bytes.data());
  if (sizeof_hdr != 348) {
    if (detail::byteswap_value(sizeof_hdr) != 348) throw Error(ErrorCode::BadMagic, "sizeof_hdr is not 348");
    swap = true;
  }
  auto get = [&](std::size_t off, auto tag) {
    using T = decltype(tag);
    T v = detail::get_le<T>(bytes.data() + off);
    return swap ? detail::byteswap_value(v) : v;
  };

  std::array<std::int16_t, 8> dim{};
  for (std::size_t k = 0; k < 8; ++k) dim[k] = get(40 + 2 * k, std::int16_t{});
  const auto datatype = get(70, std::int16_t{});
  std::array<float, 8> pixdim{};
  for (std::size_t k = 0; k < 8; ++k) pixdim[k] = get(76 + 4 * k, float{});
  const float vox_offset = get(108, float{});
  const float scl_slope = get(112, float{});
  const float scl_inter = get(116, float{});
  const auto qform_code = get(252, std::int16_t{});
  const auto sform_code = get(254, std::int16_t{});

  std::size_t elem = 0;
  if (datatype == 16) {
    elem = 4;
  } else if (datatype == 2) {
    elem = 1;
  } else {
    throw Error(ErrorCode::UnsupportedDatatype, "NIfTI datatype " + std::to_string(datatype));
  }

  NiftiVolume out;
  if (dim[0] < 1 || dim[0] > 7) throw Error(ErrorCode::InvalidSpec, "NIfTI dim[0] out of range");
  std::array<std::size_t, 3> n{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  for (int a = 0; a < 3; ++a) {
    if (a < dim[0]) {
      if (dim[a + 1] < 1) throw Error(ErrorCode::InvalidSpec, "NIfTI dimension < 1");
      n[a] = static_cast<std::size_t>(dim[a + 1]);
      const double p = std::abs(static_cast<double>(pixdim[a + 1]));
      spacing[a] = p > 0.0 ? p : 1.0;
    }
  }
  for (int a = 4; a <= dim[0]; ++a) {
    if (dim[a] > 1) throw Error(ErrorCode::InvalidSpec, "only 3D NIfTI volumes are supported");
  }
  if (qform_code > 0 || sform_code > 0) {
    out.warnings.push_back("orientation (qform/sform) ignored; only voxel spacing is used");
  }
  if (pixdim[0] < 0.0f) out.warnings.push_back("negative qfac ignored");

  const GridSpec spec{n[0], n[1], n[2], spacing[0], spacing[1], spacing[2]};
  spec.validate();
  const auto offset = static_cast<std::size_t>(vox_offset < 352.0f ? 352.0f : vox_offset);
  const std::size_t need = spec.voxel_count() * elem;
  if (offset > bytes.size() || bytes.size() - offset < need) {
    throw Error(ErrorCode::SizeMismatch, "NIfTI payload shorter than the header declares");
  }

  std::vector<double> values(spec.voxel_count());
  const unsigned char* p = bytes.data() + offset;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (elem == 4) {
      float f = detail::get_le<float>(p + 4 * i);
      if (swap) f = detail::byteswap_value(f);
      values[i] = f;
    } else {
      values[i] = p[i];
    }
  }
  if (scl_slope != 0.0f && std::isfinite(scl_slope) && !(scl_slope == 1.0f && scl_inter == 0.0f)) {
    for (double& v : values) v = v * scl_slope + scl_inter;
  }
  for (const auto& w : out.warnings) std::cerr << "warning: " << path.string() << ": " << w << '\n';
  out.field = ScalarField3D(spec, std::move(values));
  return out;
}

json read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version")) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": missing schema_version");
  }
  if (j["schema_version"] != 1) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": unsupported schema_version " + j["schema_version"].dump());
  }
  return j;
}

void write_json(const fs::path& path, const json& value) { detail::write_file_atomic(path, value.dump(2) + "\n"); }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) out << (k ? "," : "") << cells[k];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  detail::write_file_atomic(path, out.str());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string text;
  while (std::getline(in, text)) {
    std::vector<std::string> cells;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!text.empty() && text.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace tfk
