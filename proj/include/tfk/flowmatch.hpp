#pragma once

// Optimal-transport flow matching on image-space field stacks.
//
// The source z0 ~ N(0, I) and a data sample z1 are joined by the straight
// path z_tau = (1 - tau) z0 + tau z1, whose velocity is z1 - z0. A small
// convolutional model v(z_tau, tau, c) is regressed onto that velocity, and
// samples are produced by integrating the learned ODE from tau = 0 to 1.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tfk/conditioning.hpp"
#include "tfk/grid.hpp"

namespace tfk {

/// (1 - tau) z0 + tau z1, elementwise. Endpoints are returned bitwise.
FieldStack interpolate(const FieldStack& z0, const FieldStack& z1, double tau);

/// z1 - z0, elementwise.
FieldStack target_velocity(const FieldStack& z0, const FieldStack& z1);

/// Standard-normal source sample, reproducible from (seed, sample index).
FieldStack source_noise(const GridSpec& spec, std::size_t channels, std::uint64_t seed,
                        std::uint64_t sample_index);

class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual FieldStack velocity(const FieldStack& z, double tau, const ConditioningTensor& cond) const = 0;
};

/// What the last convolution predicts. Velocity: its output is v directly.
/// Data: its output is an estimate x of the clean sample and
/// v = (x - z) / max(1 - tau, data_tau_floor), which turns the noise-removal
/// gain 1 / (1 - tau) into a fixed part of the model instead of something the
/// ReLU stack has to approximate.
enum class Prediction { Velocity, Data };

struct ModelConfig {
  std::size_t data_channels = 1;
  std::size_t cond_channels = kConditioningChannels;
  std::size_t hidden = 16;
  std::size_t tau_frequencies = 8;
  double tau_max_frequency = 64.0;
  std::size_t modality_dim = 4;
  std::size_t num_modalities = kAllModalities.size();
  std::uint64_t init_seed = 0;
  Prediction prediction = Prediction::Velocity;
  double data_tau_floor = 0.05;
  /// The network sees z - tau * data_offset and the model returns its
  /// velocity + data_offset: the same flow, run on data shifted by -offset.
  /// Centering [0, 1] images this way keeps them on the scale of the noise.
  double data_offset = 0.0;

  void validate() const;
  std::size_t spatial_inputs() const { return data_channels + cond_channels; }
  std::size_t global_inputs() const { return 2 * tau_frequencies + modality_dim; }
  bool operator==(const ModelConfig&) const = default;
};

struct FlowSample {
  FieldStack z0;
  FieldStack z1;
  double tau = 0.0;
  ConditioningTensor cond;
};

/// Three 3x3x3 convolutions (zero padding) with ReLU in between:
/// [data + cond + embeddings] -> H -> H -> data channels.
///
/// The sinusoidal tau features and the learned modality embedding are
/// spatially constant input channels of the first layer. Their convolution is
/// evaluated per boundary class of the voxel (which taps fall inside the grid),
/// which is exactly what the broadcast channels would produce at a fraction of
/// the cost.
///
/// Parameter order: layer-1 spatial weights, layer-1 global weights, layer-1
/// bias, layer-2 weights, layer-2 bias, layer-3 weights, layer-3 bias, modality
/// embedding table. Weights are [out][in][tap] with taps ordered z, y, x.
class VelocityModel final : public VelocityField {
 public:
  explicit VelocityModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t parameter_count() const { return weights_.size(); }
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }

  FieldStack velocity(const FieldStack& z, double tau, const ConditioningTensor& cond) const override;

  /// Sum of squared errors of v(z_tau, tau, c) against z1 - z0 for one
  /// sample; adds grad_scale * d(sse)/d(weights) into `grad`.
  double sample_sse_and_grad(const FlowSample& sample, std::span<double> grad, double grad_scale) const;

  std::vector<double> tau_features(double tau) const;

 private:
  struct Layout {
    std::size_t w1s, w1g, b1, w2, b2, w3, b3, emb, total;
  };
  struct Activations;

  void check_inputs(const FieldStack& z, const ConditioningTensor& cond) const;
  std::vector<double> global_features(double tau, Modality m) const;
  double output_denominator(double tau) const;
  void forward(const FieldStack& z, double tau, const ConditioningTensor& cond, Activations& act) const;

  ModelConfig config_;
  Layout layout_{};
  std::vector<double> weights_;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean squared error over batch, channels and voxels, with its exact
/// gradient. Per-sample gradients are reduced in batch order, so the result
/// does not depend on the worker count. Throws EmptyBatch.
LossAndGrad fm_loss(const VelocityModel& model, std::span<const FlowSample> batch);

struct TrainConfig {
  double learning_rate = 1e-4;
  double ema_decay = 0.999;
  std::size_t steps = 0;
  std::size_t batch = 4;
  std::uint64_t rng_seed = 0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct TrainingPair {
  FieldStack z1;
  ConditioningTensor cond;
};

struct TrainResult {
  VelocityModel model;
  VelocityModel ema;
  std::vector<double> loss_curve;  ///< batch loss before each update
};

/// ema <- decay * ema + (1 - decay) * weights
void ema_update(std::span<double> ema, std::span<const double> weights, double decay);

/// Cosine annealing from base to 0 over `total` steps, evaluated at step k.
double cosine_learning_rate(double base, std::size_t k, std::size_t total);

/// AdamW with decoupled weight decay. Each step draws batch indices, tau ~ U[0,1]
/// and source noise from counters keyed on (rng_seed, step, slot). Throws
/// EmptyDataset.
TrainResult train(const VelocityModel& initial, std::span<const TrainingPair> dataset, const TrainConfig& cfg);

enum class Integrator { Euler, Heun };

/// Fixed-step integration of dz/dtau = v(z, tau, c) from tau_start up to
/// tau_end. Throws InvalidInterval unless 0 <= tau_start <= tau_end <= 1 and
/// steps >= 1. An empty interval returns z_start unchanged.
FieldStack integrate_forward(const VelocityField& field, const FieldStack& z_start, double tau_start,
                             double tau_end, std::size_t steps, const ConditioningTensor& cond,
                             Integrator method = Integrator::Euler);

/// The same ODE run in reverse from tau = 1 down to tau_target.
FieldStack transport_backward(const VelocityField& field, const FieldStack& z1, double tau_target,
                              std::size_t steps, const ConditioningTensor& cond,
                              Integrator method = Integrator::Euler);

/// Full sampling from source noise: integrate_forward over [0, 1].
FieldStack sample(const VelocityField& field, const ConditioningTensor& cond, std::size_t channels,
                  std::uint64_t seed, std::uint64_t sample_index, std::size_t steps,
                  Integrator method = Integrator::Euler);

/// Checkpoint: "TFM1", u32 little-endian header length, JSON header, then the
/// weights and the EMA weights as little-endian f32 in parameter order.
void save_checkpoint(const std::filesystem::path& path, const VelocityModel& model, const VelocityModel& ema);

struct Checkpoint {
  VelocityModel model;
  VelocityModel ema;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every weight to the nearest f32, matching a save/load round trip.
void round_weights_to_f32(VelocityModel& model);

}  // namespace tfk
