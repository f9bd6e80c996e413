#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "osclab/matrix.hpp"
#include "osclab/quantizer.hpp"
#include "osclab/rng.hpp"

namespace osclab {

enum class Activation : std::uint8_t { kIdentity = 0, kReLU = 1 };

inline std::string activation_label(Activation a) {
  return a == Activation::kReLU ? "relu" : "identity";
}

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kReLU;
  bool quantized = true;
};

/// Dense MLP with latent full-precision weights. Quantization only ever
/// happens on the forward path or at export; the stored weights are the
/// latent values and are never overwritten by a forward pass.
struct Model {
  std::vector<LayerSpec> layers;
  std::vector<Matrix> weights;  // in_dim x out_dim per layer
  std::vector<Matrix> biases;   // 1 x out_dim per layer
  std::uint64_t version = 0;    // bumped on every parameter update

  std::size_t layer_count() const { return layers.size(); }
  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

/// Layer stack for an MLP: `hidden_count` hidden layers of `hidden_dim`
/// units plus an identity-activation output layer.
inline std::vector<LayerSpec> mlp_layers(std::size_t input_dim, std::size_t hidden_dim,
                                         std::size_t hidden_count, std::size_t output_dim,
                                         Activation hidden_activation = Activation::kReLU,
                                         bool quantized = true) {
  std::vector<LayerSpec> layers;
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < hidden_count; ++i) {
    layers.push_back({prev, hidden_dim, hidden_activation, quantized});
    prev = hidden_dim;
  }
  layers.push_back({prev, output_dim, Activation::kIdentity, quantized});
  return layers;
}

/// He-style init: weights ~ N(0, sqrt(2/in_dim)), biases zero. Each layer
/// draws from its own substream so layer counts don't shift other layers.
inline Model init_model(std::vector<LayerSpec> layers, const Rng& init_rng) {
  Model model;
  model.layers = std::move(layers);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& spec = model.layers[l];
    if (l > 0 && spec.in_dim != model.layers[l - 1].out_dim) {
      throw ShapeError("init_model: layer " + std::to_string(l) + " in_dim " +
                       std::to_string(spec.in_dim) + " != previous out_dim " +
                       std::to_string(model.layers[l - 1].out_dim));
    }
    Rng layer_rng = init_rng.split(l);
    const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_dim));
    model.weights.push_back(rand_normal(layer_rng, spec.in_dim, spec.out_dim, 0.0, stddev));
    model.biases.push_back(Matrix(1, spec.out_dim));
  }
  return model;
}

/// Forward-pass mode: plain full precision, or fake quantization of the
/// weights of every layer flagged quantized. With `frozen_scales` set the
/// per-layer scales are taken as given instead of recomputed from the
/// current weights.
struct EvalMode {
  bool fake_quant = false;
  std::optional<QuantSpec> spec;
  std::vector<double> frozen_scales;  // one per layer when non-empty

  static EvalMode full_precision() { return EvalMode{}; }

  static EvalMode fake_quantized(QuantSpec spec) {
    EvalMode m;
    m.fake_quant = true;
    m.spec = spec;
    return m;
  }

  static EvalMode fake_quantized(QuantSpec spec, std::vector<double> scales) {
    EvalMode m = fake_quantized(spec);
    m.frozen_scales = std::move(scales);
    return m;
  }

  friend bool operator==(const EvalMode& a, const EvalMode& b) {
    return a.fake_quant == b.fake_quant && a.spec == b.spec &&
           a.frozen_scales == b.frozen_scales;
  }
};

/// Everything backward needs, captured by the matching forward call.
struct ForwardCache {
  std::vector<Matrix> inputs;        // input to each layer; inputs[0] is x
  std::vector<Matrix> preacts;       // pre-activation outputs per layer
  std::vector<Matrix> used_weights;  // the weights the products actually used
  std::vector<double> scales;        // per-layer scale (0 when not quantized)
  Matrix logits;
  EvalMode mode;
  std::uint64_t model_version = 0;
};

namespace detail {
inline Matrix apply_activation(const Matrix& z, Activation a) {
  if (a == Activation::kIdentity) return z;
  Matrix out = z;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}
}  // namespace detail

inline ForwardCache forward_cached(const Model& model, const Matrix& x, const EvalMode& mode) {
  if (x.cols() != model.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) +
                     " columns, model expects " + std::to_string(model.input_dim()));
  }
  if (mode.fake_quant && !mode.frozen_scales.empty() &&
      mode.frozen_scales.size() != model.layer_count()) {
    throw ShapeError("forward: frozen_scales must have one entry per layer");
  }
  ForwardCache cache;
  cache.mode = mode;
  cache.model_version = model.version;
  Matrix activ = x;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const LayerSpec& layer = model.layers[l];
    cache.inputs.push_back(activ);
    double layer_scale = 0.0;
    Matrix used;
    if (mode.fake_quant && layer.quantized) {
      layer_scale = mode.frozen_scales.empty() ? scale_factor(model.weights[l], *mode.spec)
                                               : mode.frozen_scales[l];
      used = quantize_with_scale(model.weights[l], layer_scale).values;
    } else {
      used = model.weights[l];
    }
    Matrix z = add_row_broadcast(matmul(activ, used), model.biases[l]);
    cache.scales.push_back(layer_scale);
    cache.used_weights.push_back(std::move(used));
    cache.preacts.push_back(z);
    activ = detail::apply_activation(z, layer.activation);
  }
  cache.logits = activ;
  return cache;
}

inline Matrix forward(const Model& model, const Matrix& x, const EvalMode& mode) {
  return forward_cached(model, x, mode).logits;
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

/// Reverse pass. In fake-quant mode the products were taken against q(w),
/// so dL/dq(w) falls out of the chain rule; the straight-through estimator
/// assigns that gradient unchanged to the latent weight slot.
inline Gradients backward(const Model& model, const ForwardCache& cache,
                          const Matrix& grad_logits, const EvalMode& mode) {
  if (cache.model_version != model.version) {
    throw ContractError("backward: cache is stale (model changed since forward)");
  }
  if (!(cache.mode == mode)) {
    throw ContractError("backward: mode differs from the matching forward call");
  }
  if (!grad_logits.same_shape(cache.logits)) {
    throw ShapeError("backward: grad_logits shape mismatch");
  }
  const std::size_t n_layers = model.layer_count();
  Gradients grads;
  grads.weights.resize(n_layers);
  grads.biases.resize(n_layers);
  Matrix delta = grad_logits;
  for (std::size_t li = n_layers; li-- > 0;) {
    const LayerSpec& layer = model.layers[li];
    if (layer.activation == Activation::kReLU) {
      Matrix mask = cache.preacts[li];
      for (double& v : mask.values()) v = v > 0.0 ? 1.0 : 0.0;
      delta = hadamard(delta, mask);
    }
    grads.weights[li] = matmul(transpose(cache.inputs[li]), delta);
    Matrix bias_grad(1, layer.out_dim);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const double* row = delta.row_ptr(r);
      double* acc = bias_grad.row_ptr(0);
      for (std::size_t c = 0; c < layer.out_dim; ++c) acc[c] += row[c];
    }
    grads.biases[li] = std::move(bias_grad);
    if (li > 0) {
      delta = matmul(delta, transpose(cache.used_weights[li]));
    }
  }
  return grads;
}

/// Mean over examples of 1/2 * squared error. Gradient w.r.t. predictions.
inline std::pair<double, Matrix> loss_mse(const Matrix& pred, const Matrix& target) {
  detail::require_same_shape(pred, target, "loss_mse");
  const double inv_n = 1.0 / static_cast<double>(pred.rows());
  double value = 0.0;
  Matrix grad(pred.rows(), pred.cols());
  auto pv = pred.values();
  auto tv = target.values();
  auto gv = grad.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double diff = pv[i] - tv[i];
    value += 0.5 * diff * diff;
    gv[i] = diff * inv_n;
  }
  return {value * inv_n, grad};
}

/// Mean cross-entropy of row-wise softmax. Gradient w.r.t. logits.
inline std::pair<double, Matrix> loss_softmax_ce(const Matrix& logits,
                                                 const std::vector<int>& labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("loss_softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  double value = 0.0;
  Matrix grad(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* z = logits.row_ptr(r);
    double* g = grad.row_ptr(r);
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
      throw ShapeError("loss_softmax_ce: label " + std::to_string(label) + " out of range");
    }
    double zmax = z[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) denom += std::exp(z[c] - zmax);
    value += std::log(denom) - (z[label] - zmax);
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double p = std::exp(z[c] - zmax) / denom;
      g[c] = (p - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  return {value * inv_n, grad};
}

inline double accuracy(const Model& model, const Matrix& x, const std::vector<int>& labels,
                       const EvalMode& mode) {
  const Matrix logits = forward(model, x, mode);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* row = logits.row_ptr(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> m_weights, v_weights, m_biases, v_biases;

  static AdamState create(const Model& model, double lr) {
    AdamState s;
    s.lr = lr;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      s.m_weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
      s.v_weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
      s.m_biases.emplace_back(1, model.biases[l].cols());
      s.v_biases.emplace_back(1, model.biases[l].cols());
    }
    return s;
  }
};

namespace detail {
inline void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                        const AdamState& s, double bc1, double bc2) {
  auto p = param.values();
  auto g = grad.values();
  auto mv = m.values();
  auto vv = v.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    mv[i] = s.beta1 * mv[i] + (1.0 - s.beta1) * g[i];
    vv[i] = s.beta2 * vv[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double m_hat = mv[i] / bc1;
    const double v_hat = vv[i] / bc2;
    p[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}
}  // namespace detail

/// Bias-corrected Adam update over all parameters.
inline void adam_step(Model& model, const Gradients& grads, AdamState& state) {
  if (grads.weights.size() != model.layer_count() || grads.biases.size() != model.layer_count()) {
    throw ShapeError("adam_step: gradient layer count mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    detail::require_same_shape(model.weights[l], grads.weights[l], "adam_step");
    detail::require_same_shape(model.biases[l], grads.biases[l], "adam_step");
    detail::adam_update(model.weights[l], grads.weights[l], state.m_weights[l],
                        state.v_weights[l], state, bc1, bc2);
    detail::adam_update(model.biases[l], grads.biases[l], state.m_biases[l],
                        state.v_biases[l], state, bc1, bc2);
  }
  model.version += 1;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "OSCL" magic, u32 version, u32 layer count, then per
// layer u32 in_dim, u32 out_dim, u8 activation, u8 quantized, row-major
// little-endian f64 weights followed by f64 biases.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 4);
}

inline void put_f64(std::ofstream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

inline std::uint32_t get_u32(std::ifstream& in, const std::string& field) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw FormatError("checkpoint: truncated while reading " + field);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

inline double get_f64(std::ifstream& in, const std::string& field) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw FormatError("checkpoint: truncated while reading " + field);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  out.write("OSCL", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(model.layer_count()));
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const LayerSpec& layer = model.layers[l];
    detail::put_u32(out, static_cast<std::uint32_t>(layer.in_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(layer.out_dim));
    out.put(static_cast<char>(layer.activation));
    out.put(layer.quantized ? 1 : 0);
    for (double v : model.weights[l].values()) detail::put_f64(out, v);
    for (double v : model.biases[l].values()) detail::put_f64(out, v);
  }
  if (!out) throw FormatError("checkpoint: write failed for '" + path + "'");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "OSCL") {
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = detail::get_u32(in, "format version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t n_layers = detail::get_u32(in, "layer count");
  Model model;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    LayerSpec spec;
    spec.in_dim = detail::get_u32(in, "layer in_dim");
    spec.out_dim = detail::get_u32(in, "layer out_dim");
    int act = in.get();
    int quant = in.get();
    if (act == EOF || quant == EOF) throw FormatError("checkpoint: truncated layer header");
    if (act != 0 && act != 1) throw FormatError("checkpoint: unknown activation tag");
    spec.activation = static_cast<Activation>(act);
    spec.quantized = quant != 0;
    Matrix w(spec.in_dim, spec.out_dim);
    for (double& v : w.values()) v = detail::get_f64(in, "weights");
    Matrix b(1, spec.out_dim);
    for (double& v : b.values()) v = detail::get_f64(in, "biases");
    model.layers.push_back(spec);
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

}  // namespace osclab
