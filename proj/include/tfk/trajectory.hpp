#pragma once

#include <optional>
#include <vector>

#include "tfk/conditioning.hpp"
#include "tfk/grid.hpp"

namespace tfk {

struct TrajectoryEntry {
  double t_days = 0.0;
  Modality modality = Modality::FLAIR;
  ScalarField3D volume;
  LabelMask derived_mask;              ///< tumor labels decoded from `volume`
  double dice_vs_conditioning = 0.0;   ///< whole tumor, threshold 0.2
  std::optional<double> psnr_nontumor_vs_previous;  ///< absent at t = 0
};

/// Time-major: entries[t * modalities.size() + m].
struct TrajectoryBundle {
  TissueMap tissue;
  std::vector<double> times;
  std::vector<ScalarField3D> concentrations;
  std::vector<Modality> modalities;
  std::vector<TrajectoryEntry> entries;

  const TrajectoryEntry& entry(std::size_t t, std::size_t m) const {
    return entries[t * modalities.size() + m];
  }
};

}  // namespace tfk
