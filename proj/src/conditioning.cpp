#include "tfk/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "tfk/error.hpp"

namespace tfk {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::T1: return "T1";
    case Modality::T1c: return "T1c";
    case Modality::T2: return "T2";
    case Modality::FLAIR: return "FLAIR";
  }
  return "?";
}

std::optional<Modality> parse_modality(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "t1" || lower == "0") return Modality::T1;
  if (lower == "t1c" || lower == "t1ce" || lower == "1") return Modality::T1c;
  if (lower == "t2" || lower == "2") return Modality::T2;
  if (lower == "flair" || lower == "3") return Modality::FLAIR;
  return std::nullopt;
}

ConditioningTensor assemble(const TissueMap& tissue, const ScalarField3D& conc, Modality modality) {
  require_same_grid(tissue.spec, conc.spec(), "assemble");
  ConditioningTensor out{FieldStack(tissue.spec, kConditioningChannels), modality};
  auto csf = out.channels.channel(0);
  auto gm = out.channels.channel(1);
  auto wm = out.channels.channel(2);
  auto tc = out.channels.channel(3);
  for (std::size_t i = 0; i < tissue.labels.size(); ++i) {
    const double c = conc[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw Error(ErrorCode::ConcentrationOutOfRange,
                  "voxel " + std::to_string(i) + " has concentration " + std::to_string(c));
    }
    switch (tissue.labels[i]) {
      case TissueLabel::CSF: csf[i] = 1.0; break;
      case TissueLabel::GrayMatter: gm[i] = 1.0; break;
      case TissueLabel::WhiteMatter: wm[i] = 1.0; break;
      case TissueLabel::Background: break;
    }
    tc[i] = c;
  }
  return out;
}

}  // namespace tfk
