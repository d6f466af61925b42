#pragma once

// JSON forms of the run configurations. Every document carries
// "schema_version": 1; unknown keys are rejected so typos fail loudly.

#include "json.hpp"
#include "tfk/flowmatch.hpp"
#include "tfk/growth.hpp"
#include "tfk/longitudinal.hpp"

namespace tfk {

nlohmann::json to_json(const GrowthParams& p);
GrowthParams growth_params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LongitudinalPlan& p);
LongitudinalPlan plan_from_json(const nlohmann::json& j);

struct TrainSetup {
  ModelConfig model;
  TrainConfig train;
};

/// Model and optimizer settings for the synthetic phantom data.
TrainSetup toy_train_setup(std::uint64_t seed, std::size_t steps);

nlohmann::json to_json(const TrainSetup& s);
TrainSetup train_setup_from_json(const nlohmann::json& j);

struct FitSetup {
  FitSearchGrid grid;
  SimClock clock;
};

nlohmann::json to_json(const FitSetup& s);
FitSetup fit_setup_from_json(const nlohmann::json& j);

std::string integrator_name(Integrator m);
Integrator parse_integrator(const std::string& name);

}  // namespace tfk
