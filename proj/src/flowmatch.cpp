#include "tfk/flowmatch.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "json.hpp"
#include "tfk/error.hpp"
#include "tfk/parallel.hpp"
#include "tfk/rng.hpp"

namespace tfk {

FieldStack interpolate(const FieldStack& z0, const FieldStack& z1, double tau) {
  if (!z0.same_shape(z1)) throw Error(ErrorCode::ShapeMismatch, "interpolate: z0 and z1 differ in shape");
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidInterval, "interpolate: tau outside [0, 1]");
  if (tau == 0.0) return z0;
  if (tau == 1.0) return z1;
  FieldStack out = z0;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (1.0 - tau) * z0.values[i] + tau * z1.values[i];
  }
  return out;
}

FieldStack target_velocity(const FieldStack& z0, const FieldStack& z1) {
  if (!z0.same_shape(z1)) throw Error(ErrorCode::ShapeMismatch, "target_velocity: z0 and z1 differ in shape");
  FieldStack out = z1;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = z1.values[i] - z0.values[i];
  return out;
}

FieldStack source_noise(const GridSpec& spec, std::size_t channels, std::uint64_t seed,
                        std::uint64_t sample_index) {
  FieldStack z(spec, channels);
  for (std::size_t k = 0; k < z.values.size(); ++k) z.values[k] = rng::normal(seed, sample_index, k);
  return z;
}

void ModelConfig::validate() const {
  if (data_channels == 0 || hidden == 0 || num_modalities == 0) {
    throw Error(ErrorCode::InvalidConfig, "model needs at least one data channel, hidden unit and modality");
  }
  if (!(tau_max_frequency > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau_max_frequency must be > 0");
  if (!std::isfinite(data_offset)) throw Error(ErrorCode::InvalidConfig, "data_offset must be finite");
  if (!(data_tau_floor > 0.0 && data_tau_floor <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "data_tau_floor must lie in (0, 1]");
  }
}

namespace {

constexpr std::size_t kTaps = 27;

struct Dims {
  std::size_t nx, ny, nz;
  explicit Dims(const GridSpec& s) : nx(s.nx), ny(s.ny), nz(s.nz) {}
  std::size_t voxels() const { return nx * ny * nz; }
};

struct TapOffset {
  int dx, dy, dz;
};

constexpr TapOffset tap_offset(std::size_t t) {
  return {static_cast<int>(t % 3) - 1, static_cast<int>((t / 3) % 3) - 1, static_cast<int>(t / 9) - 1};
}

// Zero-padded copy of a grid with a one-voxel margin. A tap is then a constant
// offset in the flat array, so every tap is one long contiguous loop over
// [lo, hi); pad positions inside that range are computed and discarded.
struct Padded {
  std::size_t px, py, pz;
  std::size_t lo, hi;
  explicit Padded(const Dims& d) : px(d.nx + 2), py(d.ny + 2), pz(d.nz + 2) {
    lo = index(0, 0, 0);
    hi = index(d.nx - 1, d.ny - 1, d.nz - 1) + 1;
  }
  std::size_t voxels() const { return px * py * pz; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x + 1) + px * ((y + 1) + py * (z + 1)); }
  std::ptrdiff_t offset(std::size_t t) const {
    const auto [dx, dy, dz] = tap_offset(t);
    return dx + static_cast<std::ptrdiff_t>(px) * (dy + static_cast<std::ptrdiff_t>(py) * dz);
  }
};

// Blocks of kVoxelBlock outputs are computed in registers; the padded buffers
// carry that many extra zeros so the last block may run past hi.
constexpr std::size_t kVoxelBlock = 8;
constexpr std::size_t kChannelBlock = 4;

std::vector<double> pad_channels(const double* in, std::size_t channels, const Dims& d, const Padded& p) {
  std::vector<double> out(channels * p.voxels() + kVoxelBlock, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = in + c * d.voxels();
    double* dst = out.data() + c * p.voxels();
    for (std::size_t z = 0; z < d.nz; ++z)
      for (std::size_t y = 0; y < d.ny; ++y)
        std::copy_n(src + (z * d.ny + y) * d.nx, d.nx, dst + p.index(0, y, z));
  }
  return out;
}

void add_interior(const double* padded, double* out, const Dims& d, const Padded& p) {
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y) {
      const double* src = padded + p.index(0, y, z);
      double* dst = out + (z * d.ny + y) * d.nx;
      for (std::size_t x = 0; x < d.nx; ++x) dst[x] += src[x];
    }
}

// NO output channels starting at o0; wt is laid out [i][t][o].
template <std::size_t NO>
void conv_outputs(const double* pin, std::size_t cin, const double* wt, std::size_t cout, std::size_t o0,
                  const Padded& p, double* acc) {
  const std::size_t pv = p.voxels();
  std::array<std::ptrdiff_t, kTaps> off{};
  for (std::size_t t = 0; t < kTaps; ++t) off[t] = p.offset(t);
  for (std::size_t v = p.lo; v < p.hi; v += kVoxelBlock) {
    double a[NO][kVoxelBlock] = {};
    for (std::size_t i = 0; i < cin; ++i) {
      const double* in_i = pin + i * pv + v;
      const double* w_i = wt + i * kTaps * cout + o0;
      for (std::size_t t = 0; t < kTaps; ++t) {
        const double* src = in_i + off[t];
        const double* w_t = w_i + t * cout;
        for (std::size_t o = 0; o < NO; ++o) {
          const double wv = w_t[o];
          for (std::size_t k = 0; k < kVoxelBlock; ++k) a[o][k] += wv * src[k];
        }
      }
    }
    for (std::size_t o = 0; o < NO; ++o) std::copy_n(a[o], kVoxelBlock, acc + o * (pv + kVoxelBlock) + v);
  }
}

// out[o] += sum_i sum_t w(o, i, t) * shift_t(in[i]), with w(o, i, t) = wt[(i * 27 + t) * cout + o].
void conv_transposed_weights(const double* in, std::size_t cin, const std::vector<double>& wt, std::size_t cout,
                             double* out, const Dims& d) {
  const Padded p(d);
  const std::vector<double> pin = pad_channels(in, cin, d, p);
  const std::size_t groups = (cout + kChannelBlock - 1) / kChannelBlock;
  const std::size_t stride = p.voxels() + kVoxelBlock;
  parallel_for(groups, [&](std::size_t gi) {
    const std::size_t o0 = gi * kChannelBlock;
    const std::size_t no = std::min(kChannelBlock, cout - o0);
    std::vector<double> acc(no * stride, 0.0);
    switch (no) {
      case 4: conv_outputs<4>(pin.data(), cin, wt.data(), cout, o0, p, acc.data()); break;
      case 3: conv_outputs<3>(pin.data(), cin, wt.data(), cout, o0, p, acc.data()); break;
      case 2: conv_outputs<2>(pin.data(), cin, wt.data(), cout, o0, p, acc.data()); break;
      default: conv_outputs<1>(pin.data(), cin, wt.data(), cout, o0, p, acc.data()); break;
    }
    for (std::size_t o = 0; o < no; ++o) add_interior(acc.data() + o * stride, out + (o0 + o) * d.voxels(), d, p);
  });
}

// out[o] += sum_i sum_t w[o][i][t] * shift_t(in[i])
void conv_accumulate(const double* in, std::size_t cin, const double* w, std::size_t cout, double* out,
                     const Dims& d) {
  std::vector<double> wt(cout * cin * kTaps);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < cin; ++i)
      for (std::size_t t = 0; t < kTaps; ++t) wt[(i * kTaps + t) * cout + o] = w[(o * cin + i) * kTaps + t];
  conv_transposed_weights(in, cin, wt, cout, out, d);
}

// din[i] += sum_o sum_t w[o][i][t] * shift_t^T(dout[o]). The transpose of a
// tap shift is the mirrored tap, so this is a forward convolution of dout
// with the kernel flipped and input/output channels swapped.
void conv_input_grad(const double* dout, std::size_t cout, const double* w, std::size_t cin, double* din,
                     const Dims& d) {
  std::vector<double> wt(cout * cin * kTaps);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < cin; ++i)
      for (std::size_t t = 0; t < kTaps; ++t) wt[(o * kTaps + (kTaps - 1 - t)) * cin + i] = w[(o * cin + i) * kTaps + t];
  conv_transposed_weights(dout, cout, wt, cin, din, d);
}

// dw[o][i][t] += sum_v dout[o][v] * in[i][v + offset_t]
void conv_weight_grad(const double* in, std::size_t cin, const double* dout, std::size_t cout, double* dw,
                      const Dims& d) {
  const Padded p(d);
  const std::size_t pv = p.voxels();
  const std::vector<double> pin = pad_channels(in, cin, d, p);
  const std::vector<double> pout = pad_channels(dout, cout, d, p);
  const std::size_t groups = (cout + kChannelBlock - 1) / kChannelBlock;
  parallel_for(groups, [&](std::size_t gi) {
    const std::size_t o0 = gi * kChannelBlock;
    const std::size_t no = std::min(kChannelBlock, cout - o0);
    // Rows past the last channel read zeros from a scratch row.
    std::vector<double> zeros(pv + kVoxelBlock, 0.0);
    std::array<const double*, kChannelBlock> a{};
    for (std::size_t o = 0; o < kChannelBlock; ++o) a[o] = o < no ? pout.data() + (o0 + o) * pv : zeros.data();
    for (std::size_t i = 0; i < cin; ++i) {
      for (std::size_t t = 0; t < kTaps; ++t) {
        const double* b = pin.data() + i * pv + p.offset(t);
        double s[kChannelBlock][4] = {};
        // The padded buffers hold zeros past hi, so whole blocks are safe.
        for (std::size_t v = p.lo; v < p.hi; v += 4) {
          for (std::size_t o = 0; o < kChannelBlock; ++o)
            for (std::size_t k = 0; k < 4; ++k) s[o][k] += a[o][v + k] * b[v + k];
        }
        for (std::size_t o = 0; o < no; ++o) dw[((o0 + o) * cin + i) * kTaps + t] += (s[o][0] + s[o][1]) + (s[o][2] + s[o][3]);
      }
    }
  });
}

// Voxels are grouped by which of the 27 taps land inside the grid. Per axis
// the class is bit 0 = on the low face, bit 1 = on the high face.
constexpr std::size_t kBoundaryClasses = 64;

struct BoundaryClasses {
  std::vector<std::uint8_t> of_voxel;
  std::array<std::array<bool, kTaps>, kBoundaryClasses> tap_inside{};
  std::array<std::size_t, kBoundaryClasses> population{};
};

BoundaryClasses boundary_classes(const Dims& d) {
  auto axis_class = [](std::size_t x, std::size_t n) {
    return static_cast<unsigned>((x == 0 ? 1u : 0u) | (x + 1 == n ? 2u : 0u));
  };
  BoundaryClasses bc;
  bc.of_voxel.resize(d.voxels());
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const auto c = axis_class(x, d.nx) | (axis_class(y, d.ny) << 2) | (axis_class(z, d.nz) << 4);
        bc.of_voxel[(z * d.ny + y) * d.nx + x] = static_cast<std::uint8_t>(c);
        ++bc.population[c];
      }
  auto axis_ok = [](unsigned cls, int off) { return !((off < 0 && (cls & 1u)) || (off > 0 && (cls & 2u))); };
  for (unsigned c = 0; c < kBoundaryClasses; ++c) {
    for (std::size_t t = 0; t < kTaps; ++t) {
      const auto [dx, dy, dz] = tap_offset(t);
      bc.tap_inside[c][t] = axis_ok(c & 3u, dx) && axis_ok((c >> 2) & 3u, dy) && axis_ok((c >> 4) & 3u, dz);
    }
  }
  return bc;
}

}  // namespace

struct VelocityModel::Activations {
  Dims dims{GridSpec{}};
  std::vector<double> input;  // spatial inputs: data then conditioning channels
  std::vector<double> global;
  BoundaryClasses classes;
  std::vector<double> a1, h1, a2, h2, out;
};

VelocityModel::VelocityModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t s = config_.spatial_inputs(), g = config_.global_inputs(), h = config_.hidden,
                    c = config_.data_channels;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  layout_.w1s = take(h * s * kTaps);
  layout_.w1g = take(h * g * kTaps);
  layout_.b1 = take(h);
  layout_.w2 = take(h * h * kTaps);
  layout_.b2 = take(h);
  layout_.w3 = take(c * h * kTaps);
  layout_.b3 = take(c);
  layout_.emb = take(config_.num_modalities * config_.modality_dim);
  layout_.total = off;
  weights_.assign(layout_.total, 0.0);

  // He-normal hidden layers; the output layer starts at zero so the untrained
  // model is the zero velocity field.
  const std::uint64_t seed = config_.init_seed;
  const double std1 = std::sqrt(2.0 / static_cast<double>((s + g) * kTaps));
  const double std2 = std::sqrt(2.0 / static_cast<double>(h * kTaps));
  for (std::size_t k = layout_.w1s; k < layout_.b1; ++k) weights_[k] = std1 * rng::normal(seed, 1, k);
  for (std::size_t k = layout_.w2; k < layout_.b2; ++k) weights_[k] = std2 * rng::normal(seed, 2, k);
  for (std::size_t k = layout_.emb; k < layout_.total; ++k) weights_[k] = rng::normal(seed, 3, k);
}

std::vector<double> VelocityModel::tau_features(double tau) const {
  const std::size_t f = config_.tau_frequencies;
  std::vector<double> out(2 * f);
  for (std::size_t j = 0; j < f; ++j) {
    const double expo = f > 1 ? static_cast<double>(j) / static_cast<double>(f - 1) : 0.0;
    const double omega = std::pow(config_.tau_max_frequency, expo);
    out[j] = std::sin(omega * tau);
    out[f + j] = std::cos(omega * tau);
  }
  return out;
}

std::vector<double> VelocityModel::global_features(double tau, Modality m) const {
  const auto code = static_cast<std::size_t>(m);
  std::vector<double> g = tau_features(tau);
  const double* e = weights_.data() + layout_.emb + code * config_.modality_dim;
  g.insert(g.end(), e, e + config_.modality_dim);
  return g;
}

void VelocityModel::check_inputs(const FieldStack& z, const ConditioningTensor& cond) const {
  if (z.channels != config_.data_channels) {
    throw Error(ErrorCode::ModelConditioningMismatch, "data channel count differs from the model");
  }
  if (cond.channels.channels != config_.cond_channels) {
    throw Error(ErrorCode::ModelConditioningMismatch, "conditioning channel count differs from the model");
  }
  if (static_cast<std::size_t>(cond.modality) >= config_.num_modalities) {
    throw Error(ErrorCode::ModelConditioningMismatch, "modality has no embedding in this model");
  }
  require_same_grid(z.spec, cond.spec(), "velocity model input");
}

void VelocityModel::forward(const FieldStack& z, double tau, const ConditioningTensor& cond,
                            Activations& act) const {
  check_inputs(z, cond);
  const std::size_t h = config_.hidden, c = config_.data_channels, s = config_.spatial_inputs(),
                    g = config_.global_inputs();
  act.dims = Dims(z.spec);
  const std::size_t nv = act.dims.voxels();
  const double* w = weights_.data();

  act.input.resize(s * nv);
  const double shift = tau * config_.data_offset;
  for (std::size_t k = 0; k < c * nv; ++k) act.input[k] = z.values[k] - shift;
  std::copy(cond.channels.values.begin(), cond.channels.values.end(), act.input.begin() + c * nv);
  act.global = global_features(tau, cond.modality);
  act.classes = boundary_classes(act.dims);

  // Layer 1: bias + broadcast global channels + spatial convolution.
  act.a1.assign(h * nv, 0.0);
  parallel_for(h, [&](std::size_t o) {
    std::array<double, kBoundaryClasses> per_class{};
    for (std::size_t cls = 0; cls < kBoundaryClasses; ++cls) {
      if (act.classes.population[cls] == 0) continue;
      double sum = w[layout_.b1 + o];
      for (std::size_t k = 0; k < g; ++k) {
        const double* wk = w + layout_.w1g + (o * g + k) * kTaps;
        double taps = 0.0;
        for (std::size_t t = 0; t < kTaps; ++t) {
          if (act.classes.tap_inside[cls][t]) taps += wk[t];
        }
        sum += act.global[k] * taps;
      }
      per_class[cls] = sum;
    }
    double* a = act.a1.data() + o * nv;
    for (std::size_t v = 0; v < nv; ++v) a[v] = per_class[act.classes.of_voxel[v]];
  });
  conv_accumulate(act.input.data(), s, w + layout_.w1s, h, act.a1.data(), act.dims);
  act.h1.resize(h * nv);
  for (std::size_t k = 0; k < act.a1.size(); ++k) act.h1[k] = std::max(0.0, act.a1[k]);

  act.a2.assign(h * nv, 0.0);
  for (std::size_t o = 0; o < h; ++o) std::fill_n(act.a2.begin() + o * nv, nv, w[layout_.b2 + o]);
  conv_accumulate(act.h1.data(), h, w + layout_.w2, h, act.a2.data(), act.dims);
  act.h2.resize(h * nv);
  for (std::size_t k = 0; k < act.a2.size(); ++k) act.h2[k] = std::max(0.0, act.a2[k]);

  act.out.assign(c * nv, 0.0);
  for (std::size_t o = 0; o < c; ++o) std::fill_n(act.out.begin() + o * nv, nv, w[layout_.b3 + o]);
  conv_accumulate(act.h2.data(), h, w + layout_.w3, c, act.out.data(), act.dims);
  if (config_.prediction == Prediction::Data) {
    const double inv = 1.0 / output_denominator(tau);
    for (std::size_t k = 0; k < act.out.size(); ++k) act.out[k] = (act.out[k] - act.input[k]) * inv;
  }
  if (config_.data_offset != 0.0) {
    for (double& v : act.out) v += config_.data_offset;
  }
}

double VelocityModel::output_denominator(double tau) const {
  return config_.prediction == Prediction::Data ? std::max(1.0 - tau, config_.data_tau_floor) : 1.0;
}

FieldStack VelocityModel::velocity(const FieldStack& z, double tau, const ConditioningTensor& cond) const {
  Activations act;
  forward(z, tau, cond, act);
  FieldStack out(z.spec, config_.data_channels);
  out.values = std::move(act.out);
  return out;
}

double VelocityModel::sample_sse_and_grad(const FlowSample& sample, std::span<double> grad,
                                          double grad_scale) const {
  if (grad.size() != weights_.size()) throw Error(ErrorCode::ShapeMismatch, "gradient buffer size");
  const FieldStack z_tau = interpolate(sample.z0, sample.z1, sample.tau);
  Activations act;
  forward(z_tau, sample.tau, sample.cond, act);

  const std::size_t h = config_.hidden, c = config_.data_channels, s = config_.spatial_inputs(),
                    g = config_.global_inputs();
  const std::size_t nv = act.dims.voxels();
  const double* w = weights_.data();
  double* dw = grad.data();

  std::vector<double> d_out(c * nv);
  double sse = 0.0;
  for (std::size_t k = 0; k < d_out.size(); ++k) {
    const double r = act.out[k] - (sample.z1.values[k] - sample.z0.values[k]);
    sse += r * r;
    d_out[k] = 2.0 * r * grad_scale;
  }
  if (config_.prediction == Prediction::Data) {
    const double inv = 1.0 / output_denominator(sample.tau);
    for (double& d : d_out) d *= inv;
  }

  auto bias_grad = [&](const std::vector<double>& d, std::size_t channels, std::size_t at) {
    for (std::size_t o = 0; o < channels; ++o) {
      double sum = 0.0;
      for (std::size_t v = 0; v < nv; ++v) sum += d[o * nv + v];
      dw[at + o] += sum;
    }
  };
  auto relu_mask = [](std::vector<double>& d, const std::vector<double>& pre) {
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (!(pre[k] > 0.0)) d[k] = 0.0;
    }
  };

  // Layer 3.
  conv_weight_grad(act.h2.data(), h, d_out.data(), c, dw + layout_.w3, act.dims);
  bias_grad(d_out, c, layout_.b3);
  std::vector<double> d_a2(h * nv, 0.0);
  conv_input_grad(d_out.data(), c, w + layout_.w3, h, d_a2.data(), act.dims);
  relu_mask(d_a2, act.a2);

  // Layer 2.
  conv_weight_grad(act.h1.data(), h, d_a2.data(), h, dw + layout_.w2, act.dims);
  bias_grad(d_a2, h, layout_.b2);
  std::vector<double> d_a1(h * nv, 0.0);
  conv_input_grad(d_a2.data(), h, w + layout_.w2, h, d_a1.data(), act.dims);
  relu_mask(d_a1, act.a1);

  // Layer 1, spatial part.
  conv_weight_grad(act.input.data(), s, d_a1.data(), h, dw + layout_.w1s, act.dims);
  bias_grad(d_a1, h, layout_.b1);

  // Layer 1, broadcast part: reduce the upstream gradient per boundary class.
  std::vector<double> class_sum(h * kBoundaryClasses, 0.0);
  for (std::size_t o = 0; o < h; ++o) {
    const double* d = d_a1.data() + o * nv;
    double* cs = class_sum.data() + o * kBoundaryClasses;
    for (std::size_t v = 0; v < nv; ++v) cs[act.classes.of_voxel[v]] += d[v];
  }
  std::vector<double> d_global(g, 0.0);
  for (std::size_t o = 0; o < h; ++o) {
    const double* cs = class_sum.data() + o * kBoundaryClasses;
    for (std::size_t k = 0; k < g; ++k) {
      const double* wk = w + layout_.w1g + (o * g + k) * kTaps;
      double* dwk = dw + layout_.w1g + (o * g + k) * kTaps;
      for (std::size_t t = 0; t < kTaps; ++t) {
        double reach = 0.0;
        for (std::size_t cls = 0; cls < kBoundaryClasses; ++cls) {
          if (act.classes.tap_inside[cls][t]) reach += cs[cls];
        }
        dwk[t] += act.global[k] * reach;
        d_global[k] += wk[t] * reach;
      }
    }
  }
  const std::size_t tau_dims = 2 * config_.tau_frequencies;
  const std::size_t emb_at = layout_.emb + static_cast<std::size_t>(sample.cond.modality) * config_.modality_dim;
  for (std::size_t e = 0; e < config_.modality_dim; ++e) dw[emb_at + e] += d_global[tau_dims + e];
  return sse;
}

LossAndGrad fm_loss(const VelocityModel& model, std::span<const FlowSample> batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "fm_loss needs at least one sample");
  std::size_t total = 0;
  for (const auto& s : batch) total += s.z1.values.size();
  const double scale = 1.0 / static_cast<double>(total);

  const std::size_t p = model.parameter_count();
  std::vector<std::vector<double>> grads(batch.size());
  std::vector<double> sse(batch.size());
  parallel_for(batch.size(), [&](std::size_t b) {
    grads[b].assign(p, 0.0);
    sse[b] = model.sample_sse_and_grad(batch[b], grads[b], scale);
  });

  LossAndGrad out;
  out.grad.assign(p, 0.0);
  double sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    sum += sse[b];
    for (std::size_t k = 0; k < p; ++k) out.grad[k] += grads[b][k];
  }
  out.loss = sum * scale;
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw Error(ErrorCode::InvalidConfig, "ema_decay must be in [0, 1)");
  if (batch == 0) throw Error(ErrorCode::InvalidConfig, "batch must be >= 1");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
}

void ema_update(std::span<double> ema, std::span<const double> weights, double decay) {
  for (std::size_t k = 0; k < ema.size(); ++k) ema[k] = decay * ema[k] + (1.0 - decay) * weights[k];
}

double cosine_learning_rate(double base, std::size_t k, std::size_t total) {
  if (total == 0) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(total)));
}

namespace {
constexpr std::uint64_t kStreamIndex = 0x1d8e4e27c47d124fULL;
constexpr std::uint64_t kStreamTau = 0x7a6c1f3b9e5d2a81ULL;
constexpr std::uint64_t kNoiseSalt = 0x3c6ef372fe94f82bULL;
}  // namespace

TrainResult train(const VelocityModel& initial, std::span<const TrainingPair> dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "train needs at least one pair");
  cfg.validate();
  TrainResult r{initial, initial, {}};
  r.loss_curve.reserve(cfg.steps);
  auto w = r.model.weights();
  const std::size_t p = w.size();
  std::vector<double> m(p, 0.0), v(p, 0.0);
  double b1t = 1.0, b2t = 1.0;

  std::vector<FlowSample> batch(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::uint64_t slot = step * cfg.batch + b;
      const auto& pair = dataset[rng::bits(cfg.rng_seed, kStreamIndex, slot) % dataset.size()];
      FlowSample& s = batch[b];
      s.z1 = pair.z1;
      s.cond = pair.cond;
      s.tau = rng::uniform(cfg.rng_seed, kStreamTau, slot);
      s.z0 = source_noise(pair.z1.spec, pair.z1.channels, cfg.rng_seed ^ kNoiseSalt, slot);
    }
    const LossAndGrad lg = fm_loss(r.model, batch);
    r.loss_curve.push_back(lg.loss);

    const double lr = cosine_learning_rate(cfg.learning_rate, step, cfg.steps);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t k = 0; k < p; ++k) {
      const double g = lg.grad[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[k] / (1.0 - b1t);
      const double v_hat = v[k] / (1.0 - b2t);
      w[k] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * w[k]);
    }
    ema_update(r.ema.weights(), w, cfg.ema_decay);
  }
  return r;
}

namespace {

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidInterval, "tau outside [0, 1]");
}

FieldStack integrate(const VelocityField& field, const FieldStack& z_start, double t0, double t1,
                     std::size_t steps, const ConditioningTensor& cond, Integrator method) {
  if (steps == 0) throw Error(ErrorCode::InvalidInterval, "integration needs at least one step");
  if (t0 == t1) return z_start;
  const double h = (t1 - t0) / static_cast<double>(steps);
  FieldStack z = z_start;
  for (std::size_t k = 0; k < steps; ++k) {
    const double tau = t0 + static_cast<double>(k) * h;
    const double tau_next = k + 1 == steps ? t1 : t0 + static_cast<double>(k + 1) * h;
    const FieldStack v1 = field.velocity(z, tau, cond);
    if (!v1.same_shape(z)) throw Error(ErrorCode::ShapeMismatch, "velocity field changed the shape");
    if (method == Integrator::Euler) {
      for (std::size_t i = 0; i < z.values.size(); ++i) z.values[i] += h * v1.values[i];
    } else {
      FieldStack pred = z;
      for (std::size_t i = 0; i < z.values.size(); ++i) pred.values[i] += h * v1.values[i];
      const FieldStack v2 = field.velocity(pred, tau_next, cond);
      for (std::size_t i = 0; i < z.values.size(); ++i) {
        z.values[i] += 0.5 * h * (v1.values[i] + v2.values[i]);
      }
    }
  }
  return z;
}

}  // namespace

FieldStack integrate_forward(const VelocityField& field, const FieldStack& z_start, double tau_start,
                             double tau_end, std::size_t steps, const ConditioningTensor& cond,
                             Integrator method) {
  check_tau(tau_start);
  check_tau(tau_end);
  if (tau_start > tau_end) throw Error(ErrorCode::InvalidInterval, "forward integration needs tau_start <= tau_end");
  return integrate(field, z_start, tau_start, tau_end, steps, cond, method);
}

FieldStack transport_backward(const VelocityField& field, const FieldStack& z1, double tau_target,
                              std::size_t steps, const ConditioningTensor& cond, Integrator method) {
  check_tau(tau_target);
  return integrate(field, z1, 1.0, tau_target, steps, cond, method);
}

FieldStack sample(const VelocityField& field, const ConditioningTensor& cond, std::size_t channels,
                  std::uint64_t seed, std::uint64_t sample_index, std::size_t steps, Integrator method) {
  const FieldStack z0 = source_noise(cond.spec(), channels, seed, sample_index);
  return integrate_forward(field, z0, 0.0, 1.0, steps, cond, method);
}

namespace {

constexpr char kMagic[4] = {'T', 'F', 'M', '1'};

nlohmann::json header_for(const ModelConfig& c, std::size_t params) {
  return {
      {"schema_version", 1},
      {"architecture", "conv3x3x3-relu"},
      {"channel_plan", {c.spatial_inputs(), c.hidden, c.hidden, c.data_channels}},
      {"data_channels", c.data_channels},
      {"cond_channels", c.cond_channels},
      {"hidden", c.hidden},
      {"tau_frequencies", c.tau_frequencies},
      {"tau_max_frequency", c.tau_max_frequency},
      {"modality_dim", c.modality_dim},
      {"num_modalities", c.num_modalities},
      {"modality_codes", {{"T1", 0}, {"T1c", 1}, {"T2", 2}, {"FLAIR", 3}}},
      {"rng_seed", c.init_seed},
      {"prediction", c.prediction == Prediction::Data ? "data" : "velocity"},
      {"data_tau_floor", c.data_tau_floor},
      {"data_offset", c.data_offset},
      {"parameter_count", params},
  };
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VelocityModel& model, const VelocityModel& ema) {
  if (!(model.config() == ema.config())) throw Error(ErrorCode::ShapeMismatch, "EMA model has a different layout");
  const std::string header = header_for(model.config(), model.parameter_count()).dump();
  std::vector<unsigned char> bytes(kMagic, kMagic + 4);
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(header.size()));
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (double x : model.weights()) detail::put_le<float>(bytes, static_cast<float>(x));
  for (double x : ema.weights()) detail::put_le<float>(bytes, static_cast<float>(x));
  detail::write_file_atomic(path, bytes.data(), bytes.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::BadMagic, path.string() + " is not a TFM1 checkpoint");
  }
  const auto header_len = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (header_len > bytes.size() - 8) throw Error(ErrorCode::SizeMismatch, "checkpoint header truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint header: ") + e.what());
  }
  if (h.value("schema_version", 0) != 1) throw Error(ErrorCode::InvalidConfig, "unsupported checkpoint schema_version");

  ModelConfig cfg;
  try {
    cfg.data_channels = h.at("data_channels").get<std::size_t>();
    cfg.cond_channels = h.at("cond_channels").get<std::size_t>();
    cfg.hidden = h.at("hidden").get<std::size_t>();
    cfg.tau_frequencies = h.at("tau_frequencies").get<std::size_t>();
    cfg.tau_max_frequency = h.at("tau_max_frequency").get<double>();
    cfg.modality_dim = h.at("modality_dim").get<std::size_t>();
    cfg.num_modalities = h.at("num_modalities").get<std::size_t>();
    cfg.init_seed = h.at("rng_seed").get<std::uint64_t>();
    const std::string pred = h.value("prediction", std::string("velocity"));
    if (pred != "velocity" && pred != "data") throw Error(ErrorCode::InvalidConfig, "unknown prediction " + pred);
    cfg.prediction = pred == "data" ? Prediction::Data : Prediction::Velocity;
    cfg.data_tau_floor = h.value("data_tau_floor", 0.05);
    cfg.data_offset = h.value("data_offset", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck{VelocityModel(cfg), VelocityModel(cfg)};
  const std::size_t p = ck.model.parameter_count();
  const std::size_t payload = bytes.size() - 8 - header_len;
  if (payload != 2 * p * sizeof(float)) {
    throw Error(ErrorCode::SizeMismatch, "checkpoint payload has " + std::to_string(payload) + " bytes, expected " +
                                             std::to_string(2 * p * sizeof(float)));
  }
  const unsigned char* at = bytes.data() + 8 + header_len;
  for (auto* model : {&ck.model, &ck.ema}) {
    for (double& x : model->weights()) {
      x = static_cast<double>(detail::get_le<float>(at));
      at += sizeof(float);
    }
  }
  return ck;
}

void round_weights_to_f32(VelocityModel& model) {
  for (double& x : model.weights()) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace tfk
