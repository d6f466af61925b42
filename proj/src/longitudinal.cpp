#include "tfk/longitudinal.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tfk/error.hpp"
#include "tfk/metrics.hpp"
#include "tfk/parallel.hpp"
#include "tfk/phantom.hpp"

namespace tfk {

void LongitudinalPlan::validate() const {
  if (time_points.empty()) throw Error(ErrorCode::PlanInvalid, "no time points");
  if (time_points.front() != 0.0) throw Error(ErrorCode::PlanInvalid, "first time point must be 0");
  for (std::size_t i = 1; i < time_points.size(); ++i) {
    if (!(time_points[i] > time_points[i - 1])) {
      throw Error(ErrorCode::PlanInvalid, "time points must be strictly ascending");
    }
  }
  if (!(tau_tilde >= 0.0 && tau_tilde <= 1.0)) throw Error(ErrorCode::PlanInvalid, "tau_tilde outside [0, 1]");
  if (integrator_steps == 0) throw Error(ErrorCode::PlanInvalid, "integrator_steps must be >= 1");
  if (modalities.empty()) throw Error(ErrorCode::PlanInvalid, "no modalities");
  if (!(sim_dt > 0.0) || !std::isfinite(sim_dt)) throw Error(ErrorCode::PlanInvalid, "sim_dt must be > 0");
}

void check_model_for_plan(const VelocityModel& model, const LongitudinalPlan& plan) {
  const ModelConfig& cfg = model.config();
  if (cfg.data_channels != 1 || cfg.cond_channels != kConditioningChannels) {
    throw Error(ErrorCode::ModelConditioningMismatch,
                "model expects " + std::to_string(cfg.data_channels) + " data and " +
                    std::to_string(cfg.cond_channels) + " conditioning channels");
  }
  for (Modality m : plan.modalities) {
    if (static_cast<std::size_t>(m) >= cfg.num_modalities) {
      throw Error(ErrorCode::ModelConditioningMismatch,
                  "model has no embedding for modality " + std::string(modality_name(m)));
    }
  }
}

LabelMask derived_mask(const ScalarField3D& volume, const TissueMap& tissue, Modality m) {
  return segment_toy(volume, tissue, m);
}

TrajectoryBundle generate_trajectory_from_fields(const VelocityField& model, const TissueMap& tissue,
                                                 const std::vector<ScalarField3D>& concentrations,
                                                 const LongitudinalPlan& plan, const InitialVolumes& initial_z,
                                                 std::uint64_t rng_seed) {
  plan.validate();
  if (concentrations.size() != plan.time_points.size()) {
    throw Error(ErrorCode::PlanInvalid, "one concentration field per time point required");
  }
  const std::size_t nm = plan.modalities.size();
  if (initial_z && initial_z->size() != nm) {
    throw Error(ErrorCode::PlanInvalid, "initial volumes must match the modality list");
  }
  const GridSpec& spec = tissue.spec;
  for (const auto& c : concentrations) require_same_grid(spec, c.spec(), "generate_trajectory");
  if (initial_z) {
    for (const auto& v : *initial_z) require_same_grid(spec, v.spec(), "generate_trajectory initial volume");
  }

  TrajectoryBundle bundle;
  bundle.tissue = tissue;
  bundle.times = plan.time_points;
  bundle.concentrations = concentrations;
  bundle.modalities = plan.modalities;
  bundle.entries.resize(plan.time_points.size() * nm);

  // Shared across modalities so the anatomy of all contrasts stays aligned.
  const FieldStack z0 = source_noise(spec, 1, rng_seed, 0);
  std::vector<VoxelRegion> cond_masks;
  for (const auto& c : concentrations) cond_masks.push_back(concentration_to_mask(c).whole_tumor());

  std::vector<FieldStack> state(nm);
  for (std::size_t t = 0; t < plan.time_points.size(); ++t) {
    parallel_for(nm, [&](std::size_t m) {
      const Modality mod = plan.modalities[m];
      const ConditioningTensor cond = assemble(tissue, concentrations[t], mod);
      if (t == 0) {
        state[m] = initial_z ? FieldStack::from_field((*initial_z)[m])
                             : integrate_forward(model, z0, 0.0, 1.0, plan.integrator_steps, cond, plan.integrator);
      } else {
        const ConditioningTensor prev = assemble(tissue, concentrations[t - 1], mod);
        const FieldStack corrupted =
            transport_backward(model, state[m], plan.tau_tilde, plan.integrator_steps, prev, plan.integrator);
        state[m] = integrate_forward(model, corrupted, plan.tau_tilde, 1.0, plan.integrator_steps, cond,
                                     plan.integrator);
      }

      TrajectoryEntry& e = bundle.entries[t * nm + m];
      e.t_days = plan.time_points[t];
      e.modality = mod;
      e.volume = state[m].to_field(0);
      e.derived_mask = derived_mask(e.volume, tissue, mod);
      e.dice_vs_conditioning = dice(e.derived_mask.whole_tumor(), cond_masks[t]);
      if (t > 0) {
        const VoxelRegion region = nontumor_region(tissue, cond_masks[t - 1], cond_masks[t]);
        e.psnr_nontumor_vs_previous = psnr(e.volume, bundle.entries[(t - 1) * nm + m].volume, region);
      }
    });
  }
  return bundle;
}

namespace {

std::vector<ScalarField3D> simulate_plan(const TissueMap& tissue, const GrowthParams& growth,
                                         const LongitudinalPlan& plan) {
  std::vector<ScalarField3D> concs;
  for (auto& snap : simulate_at(tissue, growth, plan.time_points, plan.sim_dt)) {
    concs.push_back(std::move(snap.concentration));
  }
  return concs;
}

}  // namespace

TrajectoryBundle generate_trajectory(const VelocityModel& model, const TissueMap& tissue,
                                     const GrowthParams& growth, const LongitudinalPlan& plan,
                                     const InitialVolumes& initial_z, std::uint64_t rng_seed) {
  plan.validate();
  check_model_for_plan(model, plan);
  return generate_trajectory_from_fields(model, tissue, simulate_plan(tissue, growth, plan), plan, initial_z,
                                         rng_seed);
}

std::vector<SweepRow> corruption_sweep(const VelocityModel& model, const TissueMap& tissue,
                                       const GrowthParams& growth, const LongitudinalPlan& plan,
                                       const std::vector<double>& tau_values, std::uint64_t rng_seed) {
  plan.validate();
  check_model_for_plan(model, plan);
  for (double tau : tau_values) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::PlanInvalid, "sweep tau outside [0, 1]");
  }
  const auto concs = simulate_plan(tissue, growth, plan);
  std::vector<SweepRow> rows;
  for (double tau : tau_values) {
    LongitudinalPlan p = plan;
    p.tau_tilde = tau;
    const TrajectoryBundle b = generate_trajectory_from_fields(model, tissue, concs, p, std::nullopt, rng_seed);
    std::vector<double> dices, psnrs;
    for (const auto& e : b.entries) {
      if (e.psnr_nontumor_vs_previous) {
        dices.push_back(e.dice_vs_conditioning);
        psnrs.push_back(*e.psnr_nontumor_vs_previous);
      }
    }
    if (dices.empty()) {
      for (const auto& e : b.entries) dices.push_back(e.dice_vs_conditioning);
    }
    SweepRow row;
    row.tau_tilde = tau;
    row.mean_dice = pairwise_sum(dices) / static_cast<double>(dices.size());
    row.mean_psnr = psnrs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : pairwise_sum(psnrs) / static_cast<double>(psnrs.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace tfk
