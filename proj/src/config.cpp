#include "tfk/config.hpp"

#include <set>
#include <string>

#include "tfk/error.hpp"

namespace tfk {

using nlohmann::json;

namespace {

void check_document(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(what) + ": expected a JSON object");
  if (!j.contains("schema_version") || j.at("schema_version") != 1) {
    throw Error(ErrorCode::InvalidConfig, std::string(what) + ": schema_version must be 1");
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "schema_version" && !allowed.count(key)) {
      throw Error(ErrorCode::InvalidConfig, std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidConfig, std::string(what) + ": bad value for '" + key + "'");
  }
}

std::array<double, 3> read_point(const json& v, const char* what) {
  if (!v.is_array() || v.size() != 3) throw Error(ErrorCode::InvalidConfig, std::string(what) + ": expected [x, y, z]");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

std::string integrator_name(Integrator m) { return m == Integrator::Heun ? "heun" : "euler"; }

Integrator parse_integrator(const std::string& name) {
  if (name == "euler") return Integrator::Euler;
  if (name == "heun") return Integrator::Heun;
  throw Error(ErrorCode::InvalidConfig, "unknown integrator '" + name + "'");
}

json to_json(const GrowthParams& p) {
  return {{"schema_version", 1},
          {"rho", p.rho},
          {"d_white", p.d_white},
          {"gray_ratio", p.gray_ratio},
          {"seed_center", {p.seed_center[0], p.seed_center[1], p.seed_center[2]}},
          {"seed_sigma", p.seed_sigma},
          {"seed_amplitude", p.seed_amplitude}};
}

GrowthParams growth_params_from_json(const json& j) {
  const char* what = "growth params";
  check_document(j, {"rho", "d_white", "gray_ratio", "seed_center", "seed_sigma", "seed_amplitude", "fit_dice"}, what);
  GrowthParams p;
  read_opt(j, "rho", p.rho, what);
  read_opt(j, "d_white", p.d_white, what);
  read_opt(j, "gray_ratio", p.gray_ratio, what);
  read_opt(j, "seed_sigma", p.seed_sigma, what);
  read_opt(j, "seed_amplitude", p.seed_amplitude, what);
  if (j.contains("seed_center")) p.seed_center = read_point(j.at("seed_center"), what);
  p.validate();
  return p;
}

json to_json(const LongitudinalPlan& p) {
  json mods = json::array();
  for (Modality m : p.modalities) mods.push_back(std::string(modality_name(m)));
  return {{"schema_version", 1},
          {"time_points", p.time_points},
          {"tau_tilde", p.tau_tilde},
          {"integrator_steps", p.integrator_steps},
          {"modalities", mods},
          {"sim_dt", p.sim_dt},
          {"integrator", integrator_name(p.integrator)}};
}

LongitudinalPlan plan_from_json(const json& j) {
  const char* what = "plan";
  check_document(j, {"time_points", "tau_tilde", "integrator_steps", "modalities", "sim_dt", "integrator"}, what);
  LongitudinalPlan p;
  read_opt(j, "time_points", p.time_points, what);
  read_opt(j, "tau_tilde", p.tau_tilde, what);
  read_opt(j, "integrator_steps", p.integrator_steps, what);
  read_opt(j, "sim_dt", p.sim_dt, what);
  if (j.contains("integrator")) p.integrator = parse_integrator(j.at("integrator").get<std::string>());
  if (j.contains("modalities")) {
    p.modalities.clear();
    for (const auto& v : j.at("modalities")) {
      const auto m = parse_modality(v.get<std::string>());
      if (!m) throw Error(ErrorCode::InvalidConfig, "plan: unknown modality " + v.dump());
      p.modalities.push_back(*m);
    }
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::PlanInvalid, e.what());
  }
  return p;
}

TrainSetup toy_train_setup(std::uint64_t seed, std::size_t steps) {
  TrainSetup s;
  s.model.hidden = 8;
  s.model.prediction = Prediction::Data;
  s.model.data_tau_floor = 0.2;
  s.model.data_offset = 0.5;
  s.model.init_seed = seed;
  s.train.learning_rate = 1e-3;
  s.train.ema_decay = 0.995;
  s.train.batch = 8;
  s.train.steps = steps;
  s.train.rng_seed = seed;
  return s;
}

json to_json(const TrainSetup& s) {
  const auto& m = s.model;
  const auto& t = s.train;
  return {{"schema_version", 1},
          {"learning_rate", t.learning_rate},
          {"ema_decay", t.ema_decay},
          {"steps", t.steps},
          {"batch", t.batch},
          {"rng_seed", t.rng_seed},
          {"weight_decay", t.weight_decay},
          {"hidden", m.hidden},
          {"tau_frequencies", m.tau_frequencies},
          {"tau_max_frequency", m.tau_max_frequency},
          {"modality_dim", m.modality_dim},
          {"init_seed", m.init_seed},
          {"prediction", m.prediction == Prediction::Data ? "data" : "velocity"},
          {"data_tau_floor", m.data_tau_floor},
          {"data_offset", m.data_offset}};
}

TrainSetup train_setup_from_json(const json& j) {
  const char* what = "train config";
  check_document(j,
                 {"learning_rate", "ema_decay", "steps", "batch", "rng_seed", "weight_decay", "hidden",
                  "tau_frequencies", "tau_max_frequency", "modality_dim", "init_seed", "prediction",
                  "data_tau_floor", "data_offset"},
                 what);
  TrainSetup s;
  read_opt(j, "learning_rate", s.train.learning_rate, what);
  read_opt(j, "ema_decay", s.train.ema_decay, what);
  read_opt(j, "steps", s.train.steps, what);
  read_opt(j, "batch", s.train.batch, what);
  read_opt(j, "rng_seed", s.train.rng_seed, what);
  read_opt(j, "weight_decay", s.train.weight_decay, what);
  read_opt(j, "hidden", s.model.hidden, what);
  read_opt(j, "tau_frequencies", s.model.tau_frequencies, what);
  read_opt(j, "tau_max_frequency", s.model.tau_max_frequency, what);
  read_opt(j, "modality_dim", s.model.modality_dim, what);
  read_opt(j, "init_seed", s.model.init_seed, what);
  read_opt(j, "data_tau_floor", s.model.data_tau_floor, what);
  read_opt(j, "data_offset", s.model.data_offset, what);
  if (j.contains("prediction")) {
    const auto p = j.at("prediction").get<std::string>();
    if (p != "velocity" && p != "data") throw Error(ErrorCode::InvalidConfig, "train config: unknown prediction " + p);
    s.model.prediction = p == "data" ? Prediction::Data : Prediction::Velocity;
  }
  s.train.validate();
  s.model.validate();
  return s;
}

json to_json(const FitSetup& s) {
  json centers = json::array();
  for (const auto& c : s.grid.seed_centers) centers.push_back({c[0], c[1], c[2]});
  return {{"schema_version", 1},
          {"rho", s.grid.rho},
          {"d_white", s.grid.d_white},
          {"seed_centers", centers},
          {"gray_ratio", s.grid.base.gray_ratio},
          {"seed_sigma", s.grid.base.seed_sigma},
          {"seed_amplitude", s.grid.base.seed_amplitude},
          {"dt", s.clock.dt},
          {"t_end", s.clock.t_end}};
}

FitSetup fit_setup_from_json(const json& j) {
  const char* what = "search grid";
  check_document(j, {"rho", "d_white", "seed_centers", "gray_ratio", "seed_sigma", "seed_amplitude", "dt", "t_end"},
                 what);
  FitSetup s;
  read_opt(j, "rho", s.grid.rho, what);
  read_opt(j, "d_white", s.grid.d_white, what);
  if (j.contains("seed_centers")) {
    for (const auto& c : j.at("seed_centers")) s.grid.seed_centers.push_back(read_point(c, what));
  }
  read_opt(j, "gray_ratio", s.grid.base.gray_ratio, what);
  read_opt(j, "seed_sigma", s.grid.base.seed_sigma, what);
  read_opt(j, "seed_amplitude", s.grid.base.seed_amplitude, what);
  read_opt(j, "dt", s.clock.dt, what);
  read_opt(j, "t_end", s.clock.t_end, what);
  s.clock.snapshot_every = s.clock.t_end > 0.0 ? s.clock.t_end : 1.0;
  s.clock.validate();
  return s;
}

}  // namespace tfk
