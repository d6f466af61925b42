#pragma once

// Longitudinal sequences by predecessor manipulation. The first volume is
// sampled from noise (or supplied); every later one is obtained by running the
// previous volume backward along the flow to tau_tilde under its own
// conditioning and integrating forward again from tau_tilde to 1 under the
// next time point's conditioning:
//
//   z_tilde = transport_backward(z_prev, tau_tilde | c_prev)
//   z_next  = z_tilde + int_{tau_tilde}^{1} v(z, tau, c_next) dtau
//
// tau_tilde = 1 leaves both legs empty, so the sequence is frozen.

#include <cstdint>
#include <optional>
#include <vector>

#include "tfk/flowmatch.hpp"
#include "tfk/growth.hpp"
#include "tfk/trajectory.hpp"

namespace tfk {

struct LongitudinalPlan {
  std::vector<double> time_points{0.0};
  double tau_tilde = 0.15;
  std::size_t integrator_steps = 50;  ///< per leg
  std::vector<Modality> modalities{Modality::FLAIR};
  double sim_dt = 0.25;
  Integrator integrator = Integrator::Euler;

  /// Throws PlanInvalid.
  void validate() const;
};

/// Optional per-modality starting volumes, in plan.modalities order.
using InitialVolumes = std::optional<std::vector<ScalarField3D>>;

/// Simulates the concentration fields at plan.time_points and generates the
/// sequence. Throws PlanInvalid or ModelConditioningMismatch.
TrajectoryBundle generate_trajectory(const VelocityModel& model, const TissueMap& tissue,
                                     const GrowthParams& growth, const LongitudinalPlan& plan,
                                     const InitialVolumes& initial_z, std::uint64_t rng_seed);

/// Same, from a precomputed concentration sequence (one per time point).
TrajectoryBundle generate_trajectory_from_fields(const VelocityField& model, const TissueMap& tissue,
                                                 const std::vector<ScalarField3D>& concentrations,
                                                 const LongitudinalPlan& plan, const InitialVolumes& initial_z,
                                                 std::uint64_t rng_seed);

/// Throws ModelConditioningMismatch unless the model takes one data channel,
/// the standard conditioning channels and knows every requested modality.
void check_model_for_plan(const VelocityModel& model, const LongitudinalPlan& plan);

struct SweepRow {
  double tau_tilde = 0.0;
  double mean_dice = 0.0;  ///< over follow-up entries, or all entries for a single time point
  double mean_psnr = 0.0;  ///< over follow-up entries; NaN for a single time point
};

/// One trajectory per tau value with everything else fixed (same
/// concentrations, seed and t = 0 volumes).
std::vector<SweepRow> corruption_sweep(const VelocityModel& model, const TissueMap& tissue,
                                       const GrowthParams& growth, const LongitudinalPlan& plan,
                                       const std::vector<double>& tau_values, std::uint64_t rng_seed);

/// Tumor labels read back from a generated volume by the toy image rule.
LabelMask derived_mask(const ScalarField3D& volume, const TissueMap& tissue, Modality m);

}  // namespace tfk
