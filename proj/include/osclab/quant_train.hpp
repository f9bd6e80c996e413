#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "osclab/datasets.hpp"
#include "osclab/errors.hpp"
#include "osclab/network.hpp"
#include "osclab/oscillation.hpp"
#include "osclab/quantizer.hpp"
#include "osclab/rng.hpp"

namespace osclab {

enum class Regime { kBaseline, kQAT, kOscReg };

inline std::string regime_label(Regime r) {
  switch (r) {
    case Regime::kBaseline: return "baseline";
    case Regime::kQAT: return "qat";
    default: return "oscreg";
  }
}

inline Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::kBaseline;
  if (s == "qat") return Regime::kQAT;
  if (s == "oscreg") return Regime::kOscReg;
  throw ConfigError("unknown regime '" + s + "' (expected baseline, qat or oscreg)");
}

/// Seed substreams: a run seed fans out into independent streams so that
/// e.g. changing the shuffle can never disturb the weight init.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamShuffle = 2;
inline constexpr std::uint64_t kStreamData = 3;

struct TrainConfig {
  Regime regime = Regime::kBaseline;
  std::optional<QuantSpec> spec;  // target width; required for QAT/OscReg
  double lambda = 1.0;            // regularization strength, OscReg only
  double lr = 1e-3;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;  // epochs without val improvement; 0 disables early stopping
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  bool scale_frozen = false;   // pin quantizer scales to the initial weights
  bool track_per_step = false; // oscillation tracking every step instead of every epoch

  void validate() const {
    if (regime != Regime::kBaseline && !spec.has_value()) {
      throw ConfigError("config: regime '" + regime_label(regime) + "' needs a bit width");
    }
    if (lambda < 0.0) throw ConfigError("config: lambda must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("config: lr must be > 0");
    if (max_epochs < 1) throw ConfigError("config: max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  }

  std::string width_label() const { return spec ? spec->label() : "fp32"; }
};

// ---------------------------------------------------------------------------
// Oscillation regularizer: per quantized layer the mean of q(w)^2 - w^2,
// halved and scaled by lambda. Its straight-through gradient is
// -(lambda/n) * quant_error, which pulls latent weights toward the nearest
// quantization threshold.
// ---------------------------------------------------------------------------

inline double reg_value_with_scales(const Model& model, std::span<const double> scales,
                                    double lambda) {
  double total = 0.0;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (!model.layers[l].quantized) continue;
    const Matrix& w = model.weights[l];
    const Matrix q = quantize_with_scale(w, scales[l]).values;
    double layer_sum = 0.0;
    auto wv = w.values();
    auto qv = q.values();
    for (std::size_t i = 0; i < wv.size(); ++i) layer_sum += qv[i] * qv[i] - wv[i] * wv[i];
    total += layer_sum / static_cast<double>(wv.size());
  }
  return 0.5 * lambda * total;
}

inline std::vector<double> current_scales(const Model& model, const QuantSpec& spec) {
  std::vector<double> scales(model.layer_count(), 0.0);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (model.layers[l].quantized) scales[l] = scale_factor(model.weights[l], spec);
  }
  return scales;
}

inline double reg_value(const Model& model, const QuantSpec& spec, double lambda) {
  if (lambda < 0.0) throw ConfigError("reg_value: lambda must be >= 0");
  return reg_value_with_scales(model, current_scales(model, spec), lambda);
}

/// Gradient tensors of the regularizer: -(lambda/n_l) * (w - q(w)) per
/// quantized layer, zero for the rest. Biases are untouched by design.
inline Gradients reg_grad_with_scales(const Model& model, std::span<const double> scales,
                                      double lambda) {
  Gradients grads;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const Matrix& w = model.weights[l];
    Matrix gw(w.rows(), w.cols());
    if (model.layers[l].quantized && lambda != 0.0) {
      const double coeff = lambda / static_cast<double>(w.size());
      auto wv = w.values();
      auto gv = gw.values();
      for (std::size_t i = 0; i < wv.size(); ++i) {
        gv[i] = coeff * (quantize_value(wv[i], scales[l]) - wv[i]);
      }
    }
    grads.weights.push_back(std::move(gw));
    grads.biases.push_back(Matrix(1, model.biases[l].cols()));
  }
  return grads;
}

inline Gradients reg_grad(const Model& model, const QuantSpec& spec, double lambda) {
  if (lambda < 0.0) throw ConfigError("reg_grad: lambda must be >= 0");
  return reg_grad_with_scales(model, current_scales(model, spec), lambda);
}

/// Post-training quantization in its most minimal form: replace every
/// quantized layer's weights by their quantized values. No calibration, no
/// bias correction; the input model is left untouched.
inline Model ptq(const Model& model, const QuantSpec& spec) {
  Model out = model;
  for (std::size_t l = 0; l < out.layer_count(); ++l) {
    if (!out.layers[l].quantized) continue;
    out.weights[l] = quantize(out.weights[l], spec).values;
  }
  out.version = model.version + 1;
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
  double train_loss = 0.0;
  double val_acc_fp = 0.0;
  double val_acc_target = 0.0;  // equals val_acc_fp for the baseline regime
  double reg_value = 0.0;       // zero outside OscReg
};

struct RunRecord {
  std::string config_id;
  std::uint64_t seed = 0;
  std::string regime;
  std::string width;  // "fp32" when training has no target width
  double lambda = 0.0;
  std::string activation;
  std::string rng_algorithm;
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_val_metric = 0.0;
  double fraction_oscillating = 0.0;        // share of tracked weights that ever oscillated
  double near_threshold_first_layer = 0.0;  // cluster fraction of the first quantized layer
  std::vector<double> final_scales;  // per-layer quantizer scales at the end
  std::string checkpoint_path;       // filled by the harness when persisted
  std::string osc_log_path;          // filled by the harness when persisted
  std::vector<std::pair<std::string, double>> cross_bit;  // width label -> test accuracy
};

/// Per-epoch (or per-step) oscillation snapshot hook; receives each tracked
/// layer's current bin indices and cumulative counts.
using OscSnapshotFn =
    std::function<void(std::size_t epoch, std::size_t layer, std::span<const std::int64_t> bins,
                       std::span<const std::uint64_t> counts)>;

struct TrainResult {
  Model model;  // best-epoch weights restored
  RunRecord record;
  std::vector<OscillationTracker> trackers;  // one per layer; empty for layers never tracked
};

namespace detail {

inline std::vector<std::int64_t> bin_indices_of(const Matrix& w, double scale) {
  std::vector<std::int64_t> bins;
  bins.reserve(w.size());
  for (double v : w.values()) bins.push_back(round_half_even_to_int(v / scale));
  return bins;
}

struct BestCheckpoint {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  double metric = -1.0;
  std::size_t epoch = 0;

  void capture(const Model& model, double m, std::size_t e) {
    weights = model.weights;
    biases = model.biases;
    metric = m;
    epoch = e;
  }

  void restore(Model& model) const {
    model.weights = weights;
    model.biases = biases;
    model.version += 1;
  }
};

}  // namespace detail

/// Runs one training regime over the train split with per-epoch validation.
/// Early stopping watches full-precision validation accuracy for the
/// baseline and target-bit validation accuracy for QAT/OscReg (the
/// fake-quantized forward at the training width); the best epoch's weights
/// are restored before returning.
inline TrainResult train(Model model, const Dataset& data, const TrainConfig& config,
                         const OscSnapshotFn& osc_sink = nullptr) {
  config.validate();
  const SplitView train_view = data.view(Split::kTrain);
  const SplitView val_view = data.view(Split::kVal);
  if (train_view.labels.empty()) throw ConfigError("train: train split is empty");
  if (val_view.labels.empty()) throw ConfigError("train: val split is empty");

  const bool has_spec = config.spec.has_value();
  std::vector<double> frozen_scales;
  if (config.scale_frozen && has_spec) frozen_scales = current_scales(model, *config.spec);
  const auto scales_now = [&]() {
    return config.scale_frozen ? frozen_scales : current_scales(model, *config.spec);
  };

  const EvalMode fp_mode = EvalMode::full_precision();
  const auto quant_mode = [&]() {
    return config.scale_frozen ? EvalMode::fake_quantized(*config.spec, frozen_scales)
                               : EvalMode::fake_quantized(*config.spec);
  };

  RunRecord record;
  record.seed = config.seed;
  record.regime = regime_label(config.regime);
  record.width = config.width_label();
  record.lambda = config.regime == Regime::kOscReg ? config.lambda : 0.0;
  record.activation = activation_label(model.layers.empty() ? Activation::kIdentity
                                                            : model.layers.front().activation);
  record.rng_algorithm = Rng::kAlgorithm;

  std::vector<OscillationTracker> trackers;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    trackers.emplace_back(model.layers[l].quantized && has_spec ? model.weights[l].size() : 0);
  }
  std::size_t snapshot_index = 0;  // epoch number, or step number in per-step mode
  const auto take_snapshot = [&]() {
    if (!has_spec) return;
    const std::vector<double> scales = scales_now();
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      if (trackers[l].size() == 0) continue;
      const auto bins = detail::bin_indices_of(model.weights[l], scales[l]);
      trackers[l].observe(bins);
      if (osc_sink) osc_sink(snapshot_index, l, bins, trackers[l].counts());
    }
    ++snapshot_index;
  };

  Rng shuffle_rng = Rng(config.seed).split(kStreamShuffle);
  std::vector<std::size_t> order(train_view.labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  AdamState adam = AdamState::create(model, config.lr);
  detail::BestCheckpoint best;
  std::size_t epochs_since_best = 0;

  if (!config.track_per_step) take_snapshot();  // epoch-cadence baseline snapshot

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    // Fisher-Yates reshuffle from the run's shuffle stream.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.next_u64() % i;
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    const std::size_t n_train = order.size();
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n_train - start);
      Matrix batch(count, train_view.features.cols());
      std::vector<int> labels(count);
      for (std::size_t r = 0; r < count; ++r) {
        const std::size_t src = order[start + r];
        const double* from = train_view.features.row_ptr(src);
        double* to = batch.row_ptr(r);
        for (std::size_t c = 0; c < batch.cols(); ++c) to[c] = from[c];
        labels[r] = train_view.labels[src];
      }

      const EvalMode mode = config.regime == Regime::kQAT ? quant_mode() : fp_mode;
      const ForwardCache cache = forward_cached(model, batch, mode);
      const auto [loss, grad_logits] = loss_softmax_ce(cache.logits, labels);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch offset " + std::to_string(start));
      }
      loss_sum += loss * static_cast<double>(count);
      Gradients grads = backward(model, cache, grad_logits, mode);
      if (config.regime == Regime::kOscReg && config.lambda != 0.0) {
        const Gradients reg = reg_grad_with_scales(model, scales_now(), config.lambda);
        for (std::size_t l = 0; l < model.layer_count(); ++l) {
          add_in_place(grads.weights[l], reg.weights[l]);
        }
      }
      adam_step(model, grads, adam);
      if (config.track_per_step) take_snapshot();
    }
    if (!config.track_per_step) take_snapshot();

    EpochMetrics metrics;
    metrics.train_loss = loss_sum / static_cast<double>(n_train);
    metrics.val_acc_fp = accuracy(model, val_view.features, val_view.labels, fp_mode);
    metrics.val_acc_target =
        has_spec ? accuracy(model, val_view.features, val_view.labels, quant_mode())
                 : metrics.val_acc_fp;
    if (config.regime == Regime::kOscReg) {
      metrics.reg_value = reg_value_with_scales(model, scales_now(), config.lambda);
    }
    record.epochs.push_back(metrics);

    const double stop_metric =
        config.regime == Regime::kBaseline ? metrics.val_acc_fp : metrics.val_acc_target;
    if (stop_metric > best.metric) {
      best.capture(model, stop_metric, epoch);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (config.patience > 0 && epochs_since_best >= config.patience) break;
    }
  }

  best.restore(model);
  record.best_epoch = best.epoch;
  record.best_val_metric = best.metric;
  record.final_scales =
      has_spec ? scales_now() : std::vector<double>(model.layer_count(), 0.0);

  TrainResult result;
  result.model = std::move(model);
  result.record = std::move(record);
  result.trackers = std::move(trackers);
  return result;
}

}  // namespace osclab
