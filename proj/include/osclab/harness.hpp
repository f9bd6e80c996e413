#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "osclab/datasets.hpp"
#include "osclab/errors.hpp"
#include "osclab/io.hpp"
#include "osclab/network.hpp"
#include "osclab/oscillation.hpp"
#include "osclab/quant_train.hpp"
#include "osclab/quantizer.hpp"
#include "osclab/rng.hpp"

namespace osclab {

using nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

namespace detail {

/// Collects schema complaints so one error can list every offending key.
class ConfigChecker {
 public:
  explicit ConfigChecker(std::string context) : context_(std::move(context)) {}

  void check_keys(const json& obj, const std::vector<std::string>& allowed) {
    if (!obj.is_object()) {
      complaints_.push_back(context_ + " must be an object");
      return;
    }
    for (const auto& [key, value] : obj.items()) {
      (void)value;
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        complaints_.push_back(context_ + ": unknown key '" + key + "'");
      }
    }
  }

  void require(const json& obj, const std::string& key) {
    if (!obj.contains(key)) complaints_.push_back(context_ + ": missing key '" + key + "'");
  }

  void complain(const std::string& what) { complaints_.push_back(context_ + ": " + what); }

  void merge(const ConfigChecker& other) {
    complaints_.insert(complaints_.end(), other.complaints_.begin(), other.complaints_.end());
  }

  void throw_if_any() const {
    if (complaints_.empty()) return;
    std::string message = "invalid config";
    for (const auto& c : complaints_) message += "\n  - " + c;
    throw ConfigError(message);
  }

  bool ok() const { return complaints_.empty(); }

 private:
  std::string context_;
  std::vector<std::string> complaints_;
};

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

struct ModelParams {
  std::size_t hidden_dim = 256;
  std::size_t hidden_layers = 5;
  Activation activation = Activation::kReLU;
};

struct OutputParams {
  std::string dir;
  bool checkpoint = true;
  bool osc_log = false;     // per-epoch bin-index log for the first tracked layer
  bool osc_counts = false;  // final per-weight oscillation counts for tracked layers
};

struct ExperimentConfig {
  std::string config_id = "run";
  json dataset;  // echoed verbatim; interpreted by build_dataset
  ModelParams model;
  TrainConfig train;
  std::vector<std::string> eval_widths = {"ternary", "3", "4", "8", "fp32"};
  OutputParams output;
};

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kReLU;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "' (expected relu or identity)");
}

inline ModelParams parse_model_params(const json& block) {
  detail::ConfigChecker checker("model");
  checker.check_keys(block, {"hidden_dim", "hidden_layers", "activation"});
  checker.throw_if_any();
  ModelParams params;
  params.hidden_dim = detail::get_or<std::size_t>(block, "hidden_dim", params.hidden_dim);
  params.hidden_layers = detail::get_or<std::size_t>(block, "hidden_layers", params.hidden_layers);
  params.activation =
      parse_activation(detail::get_or<std::string>(block, "activation", "relu"));
  if (params.hidden_dim < 1 || params.hidden_layers < 1) {
    throw ConfigError("model: hidden_dim and hidden_layers must be >= 1");
  }
  return params;
}

inline TrainConfig parse_train_block(const json& block) {
  detail::ConfigChecker checker("train");
  checker.check_keys(block, {"regime", "width", "lambda", "lr", "max_epochs", "patience",
                             "batch_size", "seed", "scale_frozen", "track_per_step"});
  checker.throw_if_any();
  TrainConfig config;
  config.regime = parse_regime(detail::get_or<std::string>(block, "regime", "baseline"));
  if (block.contains("width")) {
    const std::string width = block.at("width").get<std::string>();
    if (width != "fp32") config.spec = QuantSpec::parse(width);
  }
  config.lambda = detail::get_or<double>(block, "lambda", config.lambda);
  config.lr = detail::get_or<double>(block, "lr", config.lr);
  config.max_epochs = detail::get_or<std::size_t>(block, "max_epochs", config.max_epochs);
  config.patience = detail::get_or<std::size_t>(block, "patience", config.patience);
  config.batch_size = detail::get_or<std::size_t>(block, "batch_size", config.batch_size);
  config.seed = detail::get_or<std::uint64_t>(block, "seed", config.seed);
  config.scale_frozen = detail::get_or<bool>(block, "scale_frozen", config.scale_frozen);
  config.track_per_step = detail::get_or<bool>(block, "track_per_step", config.track_per_step);
  config.validate();
  return config;
}

inline ExperimentConfig parse_experiment_config(const json& root) {
  detail::ConfigChecker checker("config");
  checker.check_keys(root, {"schema_version", "config_id", "dataset", "model", "train",
                            "eval_widths", "output"});
  checker.require(root, "schema_version");
  checker.require(root, "dataset");
  checker.throw_if_any();
  const int version = root.at("schema_version").get<int>();
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: schema_version " + std::to_string(version) +
                      " unsupported (this build reads version " +
                      std::to_string(kConfigSchemaVersion) + ")");
  }
  ExperimentConfig config;
  config.config_id = detail::get_or<std::string>(root, "config_id", config.config_id);
  config.dataset = root.at("dataset");
  if (root.contains("model")) config.model = parse_model_params(root.at("model"));
  if (root.contains("train")) config.train = parse_train_block(root.at("train"));
  if (root.contains("eval_widths")) {
    config.eval_widths = root.at("eval_widths").get<std::vector<std::string>>();
    for (const auto& w : config.eval_widths) {
      if (w != "fp32") QuantSpec::parse(w);  // validates early
    }
  }
  if (root.contains("output")) {
    const json& out = root.at("output");
    detail::ConfigChecker out_checker("output");
    out_checker.check_keys(out, {"dir", "checkpoint", "osc_log", "osc_counts"});
    out_checker.throw_if_any();
    config.output.dir = detail::get_or<std::string>(out, "dir", "");
    config.output.checkpoint = detail::get_or<bool>(out, "checkpoint", true);
    config.output.osc_log = detail::get_or<bool>(out, "osc_log", false);
    config.output.osc_counts = detail::get_or<bool>(out, "osc_counts", false);
  }
  return config;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
}

inline json train_block_echo(const TrainConfig& config) {
  json block;
  block["regime"] = regime_label(config.regime);
  if (config.spec) block["width"] = config.spec->label();
  if (config.regime == Regime::kOscReg) block["lambda"] = config.lambda;
  block["lr"] = config.lr;
  block["max_epochs"] = config.max_epochs;
  block["patience"] = config.patience;
  block["batch_size"] = config.batch_size;
  block["seed"] = config.seed;
  block["scale_frozen"] = config.scale_frozen;
  block["track_per_step"] = config.track_per_step;
  return block;
}

inline json experiment_config_echo(const ExperimentConfig& config) {
  json root;
  root["schema_version"] = kConfigSchemaVersion;
  root["config_id"] = config.config_id;
  root["dataset"] = config.dataset;
  root["model"] = {{"hidden_dim", config.model.hidden_dim},
                   {"hidden_layers", config.model.hidden_layers},
                   {"activation", activation_label(config.model.activation)}};
  root["train"] = train_block_echo(config.train);
  root["eval_widths"] = config.eval_widths;
  return root;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// Builds the dataset a config names: deterministic blobs, or an IDX
/// train/test pair with a validation slice carved off the end of train.
inline Dataset build_dataset(const json& block) {
  detail::ConfigChecker checker("dataset");
  checker.require(block, "type");
  checker.throw_if_any();
  const std::string type = block.at("type").get<std::string>();
  if (type == "blobs") {
    detail::ConfigChecker blob_checker("dataset");
    blob_checker.check_keys(block,
                            {"type", "seed", "num_classes", "dims", "per_class", "spread"});
    blob_checker.throw_if_any();
    return gen_blobs(detail::get_or<std::uint64_t>(block, "seed", 7),
                     detail::get_or<int>(block, "num_classes", 10),
                     detail::get_or<std::size_t>(block, "dims", 64),
                     detail::get_or<std::size_t>(block, "per_class", 500),
                     detail::get_or<double>(block, "spread", 1.5));
  }
  if (type == "idx") {
    detail::ConfigChecker idx_checker("dataset");
    idx_checker.check_keys(block, {"type", "train_images", "train_labels", "test_images",
                                   "test_labels", "val_fraction"});
    idx_checker.require(block, "train_images");
    idx_checker.require(block, "train_labels");
    idx_checker.require(block, "test_images");
    idx_checker.require(block, "test_labels");
    idx_checker.throw_if_any();
    Dataset train_part = load_idx(block.at("train_images").get<std::string>(),
                                  block.at("train_labels").get<std::string>());
    const Dataset test_part = load_idx(block.at("test_images").get<std::string>(),
                                       block.at("test_labels").get<std::string>());
    const double val_fraction = detail::get_or<double>(block, "val_fraction", 0.15);
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
      throw ConfigError("dataset: val_fraction must be inside (0,1)");
    }
    const std::size_t n_train_total = train_part.labels.size();
    const auto n_val = static_cast<std::size_t>(
        std::floor(val_fraction * static_cast<double>(n_train_total)));
    for (std::size_t i = 0; i < n_train_total; ++i) {
      if (i >= n_train_total - n_val) train_part.splits[i] = Split::kVal;
    }
    Dataset data;
    data.num_classes = std::max(train_part.num_classes, test_part.num_classes);
    data.features = Matrix(n_train_total + test_part.labels.size(), train_part.features.cols());
    if (test_part.features.cols() != train_part.features.cols()) {
      throw FormatError("dataset: train and test IDX image dimensions differ");
    }
    for (std::size_t i = 0; i < n_train_total; ++i) {
      const double* src = train_part.features.row_ptr(i);
      double* dst = data.features.row_ptr(i);
      for (std::size_t c = 0; c < data.features.cols(); ++c) dst[c] = src[c];
      data.labels.push_back(train_part.labels[i]);
      data.splits.push_back(train_part.splits[i]);
    }
    for (std::size_t i = 0; i < test_part.labels.size(); ++i) {
      const double* src = test_part.features.row_ptr(i);
      double* dst = data.features.row_ptr(n_train_total + i);
      for (std::size_t c = 0; c < data.features.cols(); ++c) dst[c] = src[c];
      data.labels.push_back(test_part.labels[i]);
      data.splits.push_back(Split::kTest);
    }
    return data;
  }
  throw ConfigError("dataset: unknown type '" + type + "' (expected blobs or idx)");
}

// ---------------------------------------------------------------------------
// Cross-bit evaluation
// ---------------------------------------------------------------------------

/// Test accuracy of one trained model under each evaluation width. Every
/// quantized width goes through minimal PTQ of the latent weights; the
/// "fp32" entry evaluates the latent weights directly.
inline std::vector<std::pair<std::string, double>> cross_bit_eval(
    const Model& model, const std::vector<std::string>& widths, const Matrix& features,
    const std::vector<int>& labels) {
  std::vector<std::pair<std::string, double>> row;
  const EvalMode fp = EvalMode::full_precision();
  for (const std::string& width : widths) {
    if (width == "fp32") {
      row.emplace_back(width, accuracy(model, features, labels, fp));
    } else {
      const Model quantized = ptq(model, QuantSpec::parse(width));
      row.emplace_back(width, accuracy(quantized, features, labels, fp));
    }
  }
  return row;
}

// ---------------------------------------------------------------------------
// Single experiment
// ---------------------------------------------------------------------------

inline json run_record_to_json(const RunRecord& record, const json& config_echo) {
  json doc;
  doc["config"] = config_echo;
  doc["config_id"] = record.config_id;
  doc["seed"] = record.seed;
  doc["regime"] = record.regime;
  doc["width"] = record.width;
  doc["lambda"] = record.lambda;
  doc["activation"] = record.activation;
  doc["rng_algorithm"] = record.rng_algorithm;
  json epochs = json::array();
  for (const EpochMetrics& m : record.epochs) {
    epochs.push_back({{"train_loss", m.train_loss},
                      {"val_acc_fp", m.val_acc_fp},
                      {"val_acc_target", m.val_acc_target},
                      {"reg_value", m.reg_value}});
  }
  doc["epochs"] = std::move(epochs);
  doc["best_epoch"] = record.best_epoch;
  doc["best_val_metric"] = record.best_val_metric;
  doc["fraction_oscillating"] = record.fraction_oscillating;
  doc["near_threshold_first_layer"] = record.near_threshold_first_layer;
  doc["final_scales"] = record.final_scales;
  if (!record.checkpoint_path.empty()) doc["checkpoint"] = record.checkpoint_path;
  if (!record.osc_log_path.empty()) doc["osc_log"] = record.osc_log_path;
  json cross = json::array();
  for (const auto& [width, acc] : record.cross_bit) {
    cross.push_back({{"eval_width", width}, {"accuracy", acc}});
  }
  doc["cross_bit"] = std::move(cross);
  return doc;
}

inline RunRecord run_record_from_json(const json& doc) {
  RunRecord record;
  record.config_id = doc.at("config_id").get<std::string>();
  record.seed = doc.at("seed").get<std::uint64_t>();
  record.regime = doc.at("regime").get<std::string>();
  record.width = doc.at("width").get<std::string>();
  record.lambda = doc.at("lambda").get<double>();
  record.activation = detail::get_or<std::string>(doc, "activation", "relu");
  record.rng_algorithm = detail::get_or<std::string>(doc, "rng_algorithm", "");
  for (const json& e : doc.at("epochs")) {
    EpochMetrics m;
    m.train_loss = e.at("train_loss").get<double>();
    m.val_acc_fp = e.at("val_acc_fp").get<double>();
    m.val_acc_target = e.at("val_acc_target").get<double>();
    m.reg_value = detail::get_or<double>(e, "reg_value", 0.0);
    record.epochs.push_back(m);
  }
  record.best_epoch = doc.at("best_epoch").get<std::size_t>();
  record.best_val_metric = doc.at("best_val_metric").get<double>();
  record.fraction_oscillating = detail::get_or<double>(doc, "fraction_oscillating", 0.0);
  record.near_threshold_first_layer =
      detail::get_or<double>(doc, "near_threshold_first_layer", 0.0);
  record.final_scales = doc.at("final_scales").get<std::vector<double>>();
  record.checkpoint_path = detail::get_or<std::string>(doc, "checkpoint", "");
  record.osc_log_path = detail::get_or<std::string>(doc, "osc_log", "");
  for (const json& c : doc.at("cross_bit")) {
    record.cross_bit.emplace_back(c.at("eval_width").get<std::string>(),
                                  c.at("accuracy").get<double>());
  }
  return record;
}

struct ExperimentResult {
  RunRecord record;
  Model model;
  std::vector<OscillationTracker> trackers;
};

/// Pools every tracked layer's per-weight oscillation counts into one
/// sample, as doubles ready for welch_t.
inline std::vector<double> pooled_osc_counts(const std::vector<OscillationTracker>& trackers) {
  std::vector<double> counts;
  for (const OscillationTracker& t : trackers) {
    for (std::uint64_t c : t.counts()) counts.push_back(static_cast<double>(c));
  }
  return counts;
}

inline double fraction_oscillating_of(const std::vector<OscillationTracker>& trackers) {
  std::size_t total = 0, oscillating = 0;
  for (const OscillationTracker& t : trackers) {
    total += t.size();
    for (std::uint64_t c : t.counts()) oscillating += c > 0 ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(oscillating) / static_cast<double>(total);
}

/// Runs one configured experiment end to end: build data, init, train,
/// cross-bit evaluate, and persist artifacts when an output dir is set.
/// Written files: run_record.json, metrics.csv, optionally checkpoint.oscl,
/// osc_log.csv (first tracked layer), osc_counts.csv and cluster.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       const Dataset* prebuilt_data = nullptr) {
  const Dataset owned = prebuilt_data == nullptr ? build_dataset(config.dataset) : Dataset{};
  const Dataset& data = prebuilt_data ? *prebuilt_data : owned;

  const std::vector<LayerSpec> layers =
      mlp_layers(data.features.cols(), config.model.hidden_dim, config.model.hidden_layers,
                 static_cast<std::size_t>(data.num_classes), config.model.activation);
  Model model = init_model(layers, Rng(config.train.seed).split(kStreamInit));

  const bool persist = !config.output.dir.empty();
  std::optional<CsvWriter> osc_log;
  std::string osc_log_path;
  if (persist && config.output.osc_log && config.train.spec.has_value()) {
    osc_log_path = config.output.dir + "/osc_log.csv";
    std::filesystem::create_directories(config.output.dir);
    osc_log.emplace(osc_log_path, "epoch,layer,weight_index,bin_index,cumulative_count");
  }
  OscSnapshotFn sink = nullptr;
  if (osc_log) {
    sink = [&](std::size_t epoch, std::size_t layer, std::span<const std::int64_t> bins,
               std::span<const std::uint64_t> counts) {
      if (layer != 0) return;  // first tracked layer only; full dumps get impractical fast
      for (std::size_t i = 0; i < bins.size(); ++i) {
        osc_log->row(epoch, layer, i, bins[i], counts[i]);
      }
    };
  }

  TrainResult trained = train(std::move(model), data, config.train, sink);
  trained.record.config_id = config.config_id;
  trained.record.fraction_oscillating = fraction_oscillating_of(trained.trackers);
  if (config.train.spec.has_value()) {
    trained.record.near_threshold_first_layer =
        cluster_stats(trained.model.weights[0], *config.train.spec).near_threshold_fraction;
  }

  const SplitView test_view = data.view(Split::kTest);
  trained.record.cross_bit =
      cross_bit_eval(trained.model, config.eval_widths, test_view.features, test_view.labels);

  if (persist) {
    std::filesystem::create_directories(config.output.dir);
    if (config.output.checkpoint) {
      trained.record.checkpoint_path = config.output.dir + "/checkpoint.oscl";
      save_model(trained.model, trained.record.checkpoint_path);
    }
    if (osc_log) {
      osc_log->flush();
      trained.record.osc_log_path = osc_log_path;
    }
    if (config.output.osc_counts && config.train.spec.has_value()) {
      CsvWriter counts_csv(config.output.dir + "/osc_counts.csv", "layer,weight_index,count");
      for (std::size_t l = 0; l < trained.trackers.size(); ++l) {
        const auto& counts = trained.trackers[l].counts();
        for (std::size_t i = 0; i < counts.size(); ++i) counts_csv.row(l, i, counts[i]);
      }
    }
    if (config.train.spec.has_value()) {
      const ClusterStats stats = cluster_stats(trained.model.weights[0], *config.train.spec);
      CsvWriter cluster_csv(config.output.dir + "/cluster.csv", "bucket,mass");
      for (std::size_t b = 0; b < stats.histogram.size(); ++b) {
        cluster_csv.row(b, stats.histogram[b]);
      }
    }
    CsvWriter metrics(config.output.dir + "/metrics.csv", "config_id,seed,eval_width,accuracy");
    for (const auto& [width, acc] : trained.record.cross_bit) {
      metrics.row(trained.record.config_id, trained.record.seed, width, acc);
    }
    std::ofstream record_out(config.output.dir + "/run_record.json");
    record_out << run_record_to_json(trained.record, experiment_config_echo(config)).dump(2)
               << '\n';
  }

  ExperimentResult result;
  result.record = std::move(trained.record);
  result.model = std::move(trained.model);
  result.trackers = std::move(trained.trackers);
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepConfigEntry {
  std::string config_id;
  TrainConfig train;
};

struct SweepConfig {
  json dataset;
  ModelParams model;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepConfigEntry> configs;
  std::vector<std::pair<std::string, std::string>> compare;  // welch pairs by config_id
  std::vector<std::string> eval_widths = {"ternary", "3", "4", "8", "fp32"};
  OutputParams output;
};

inline SweepConfig parse_sweep_config(const json& root) {
  detail::ConfigChecker checker("sweep config");
  checker.check_keys(root, {"schema_version", "dataset", "model", "seeds", "configs", "compare",
                            "train_defaults", "eval_widths", "output"});
  checker.require(root, "schema_version");
  checker.require(root, "dataset");
  checker.require(root, "seeds");
  checker.require(root, "configs");
  checker.throw_if_any();
  if (root.at("schema_version").get<int>() != kConfigSchemaVersion) {
    throw ConfigError("sweep config: unsupported schema_version");
  }
  SweepConfig sweep;
  sweep.dataset = root.at("dataset");
  if (root.contains("model")) sweep.model = parse_model_params(root.at("model"));
  sweep.seeds = root.at("seeds").get<std::vector<std::uint64_t>>();
  if (sweep.seeds.empty()) throw ConfigError("sweep config: seeds must be non-empty");
  const json defaults = root.contains("train_defaults") ? root.at("train_defaults")
                                                        : json::object();
  for (const json& entry : root.at("configs")) {
    detail::ConfigChecker entry_checker("sweep config entry");
    entry_checker.require(entry, "config_id");
    entry_checker.throw_if_any();
    json merged = defaults;
    for (const auto& [key, value] : entry.items()) {
      if (key != "config_id") merged[key] = value;
    }
    SweepConfigEntry out;
    out.config_id = entry.at("config_id").get<std::string>();
    out.train = parse_train_block(merged);
    sweep.configs.push_back(std::move(out));
  }
  if (root.contains("compare")) {
    for (const json& pair : root.at("compare")) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ConfigError("sweep config: compare entries must be [config_a, config_b] pairs");
      }
      sweep.compare.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    }
  }
  if (root.contains("eval_widths")) {
    sweep.eval_widths = root.at("eval_widths").get<std::vector<std::string>>();
  }
  if (root.contains("output")) {
    sweep.output.dir = detail::get_or<std::string>(root.at("output"), "dir", "");
  }
  for (const auto& [a, b] : sweep.compare) {
    for (const std::string& id : {a, b}) {
      const bool known = std::any_of(sweep.configs.begin(), sweep.configs.end(),
                                     [&](const auto& c) { return c.config_id == id; });
      if (!known) throw ConfigError("sweep config: compare names unknown config '" + id + "'");
    }
  }
  return sweep;
}

struct SweepAggregate {
  std::string config_id;
  std::string eval_width;
  double mean = 0.0;
  double stddev = 0.0;  // only meaningful when seeds >= 2
  std::size_t seeds = 0;
};

struct WelchRow {
  std::string config_a;
  std::string config_b;
  WelchResult result;
};

struct SweepReport {
  std::vector<RunRecord> runs;
  std::vector<SweepAggregate> aggregates;
  std::vector<WelchRow> welch;
};

/// Runs the full config x seed matrix sequentially (each run owns its
/// state), aggregates cross-bit accuracies, and compares per-weight
/// oscillation counts (pooled across seeds) for the configured pairs.
inline SweepReport sweep(const SweepConfig& config) {
  const Dataset data = build_dataset(config.dataset);
  SweepReport report;
  std::map<std::string, std::map<std::string, std::vector<double>>> acc_by_config_width;
  std::map<std::string, std::vector<double>> counts_by_config;

  for (const SweepConfigEntry& entry : config.configs) {
    for (std::uint64_t seed : config.seeds) {
      ExperimentConfig experiment;
      experiment.config_id = entry.config_id;
      experiment.dataset = config.dataset;
      experiment.model = config.model;
      experiment.train = entry.train;
      experiment.train.seed = seed;
      experiment.eval_widths = config.eval_widths;
      if (!config.output.dir.empty()) {
        experiment.output.dir =
            config.output.dir + "/" + entry.config_id + "_seed" + std::to_string(seed);
        experiment.output.checkpoint = false;
      }
      ExperimentResult result = run_experiment(experiment, &data);
      for (const auto& [width, acc] : result.record.cross_bit) {
        acc_by_config_width[entry.config_id][width].push_back(acc);
      }
      auto pooled = pooled_osc_counts(result.trackers);
      auto& bucket = counts_by_config[entry.config_id];
      bucket.insert(bucket.end(), pooled.begin(), pooled.end());
      report.runs.push_back(std::move(result.record));
    }
  }

  for (const SweepConfigEntry& entry : config.configs) {
    for (const std::string& width : config.eval_widths) {
      const std::vector<double>& accs = acc_by_config_width[entry.config_id][width];
      SweepAggregate agg;
      agg.config_id = entry.config_id;
      agg.eval_width = width;
      agg.seeds = accs.size();
      double sum = 0.0;
      for (double a : accs) sum += a;
      agg.mean = accs.empty() ? 0.0 : sum / static_cast<double>(accs.size());
      if (accs.size() >= 2) {
        double sq = 0.0;
        for (double a : accs) sq += (a - agg.mean) * (a - agg.mean);
        agg.stddev = std::sqrt(sq / static_cast<double>(accs.size() - 1));
      }
      report.aggregates.push_back(std::move(agg));
    }
  }

  for (const auto& [id_a, id_b] : config.compare) {
    const std::vector<double>& counts_a = counts_by_config[id_a];
    const std::vector<double>& counts_b = counts_by_config[id_b];
    if (counts_a.size() < 2 || counts_b.size() < 2) {
      throw ConfigError("sweep: compare pair ('" + id_a + "', '" + id_b +
                        "') needs per-weight oscillation counts on both sides; "
                        "full-precision runs track none");
    }
    WelchRow row;
    row.config_a = id_a;
    row.config_b = id_b;
    row.result = welch_t(counts_a, counts_b);
    report.welch.push_back(std::move(row));
  }

  if (!config.output.dir.empty()) {
    std::filesystem::create_directories(config.output.dir);
    CsvWriter metrics(config.output.dir + "/metrics.csv", "config_id,seed,eval_width,accuracy");
    for (const RunRecord& run : report.runs) {
      for (const auto& [width, acc] : run.cross_bit) {
        metrics.row(run.config_id, run.seed, width, acc);
      }
    }
    CsvWriter aggregate_csv(config.output.dir + "/aggregates.csv",
                            "config_id,eval_width,mean,stddev,seeds");
    for (const SweepAggregate& agg : report.aggregates) {
      aggregate_csv.row(agg.config_id, agg.eval_width, agg.mean,
                        agg.seeds >= 2 ? format_double(agg.stddev) : std::string(), agg.seeds);
    }
    if (!report.welch.empty()) {
      CsvWriter welch_csv(config.output.dir + "/welch.csv", "config_a,config_b,t,df,p");
      for (const WelchRow& row : report.welch) {
        welch_csv.row(row.config_a, row.config_b, row.result.t, row.result.df, row.result.p);
      }
    }
    json doc;
    doc["runs"] = json::array();
    for (const RunRecord& run : report.runs) {
      doc["runs"].push_back(run_record_to_json(run, json::object()));
    }
    json aggs = json::array();
    for (const SweepAggregate& agg : report.aggregates) {
      json a = {{"config_id", agg.config_id},
                {"eval_width", agg.eval_width},
                {"mean", agg.mean},
                {"seeds", agg.seeds}};
      if (agg.seeds >= 2) a["stddev"] = agg.stddev;
      aggs.push_back(std::move(a));
    }
    doc["aggregates"] = std::move(aggs);
    json welch_rows = json::array();
    for (const WelchRow& row : report.welch) {
      welch_rows.push_back({{"config_a", row.config_a},
                            {"config_b", row.config_b},
                            {"t", row.result.t},
                            {"df", row.result.df},
                            {"p", row.result.p}});
    }
    doc["welch"] = std::move(welch_rows);
    std::ofstream out(config.output.dir + "/sweep_report.json");
    out << doc.dump(2) << '\n';
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report aggregation over persisted run records
// ---------------------------------------------------------------------------

/// Scans a directory tree for run_record.json files and emits one combined
/// metrics table plus per-config aggregates.
inline std::vector<RunRecord> collect_run_records(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "run_record.json") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<RunRecord> records;
  for (const std::string& path : paths) {
    records.push_back(run_record_from_json(load_json_file(path)));
  }
  return records;
}

inline void write_report(const std::vector<RunRecord>& records, const std::string& out_dir) {
  if (records.empty()) throw ConfigError("report: no run_record.json files found");
  std::filesystem::create_directories(out_dir);
  CsvWriter metrics(out_dir + "/metrics.csv", "config_id,seed,eval_width,accuracy");
  std::map<std::string, std::map<std::string, std::vector<double>>> by_config_width;
  for (const RunRecord& run : records) {
    for (const auto& [width, acc] : run.cross_bit) {
      metrics.row(run.config_id, run.seed, width, acc);
      by_config_width[run.config_id][width].push_back(acc);
    }
  }
  CsvWriter aggregate_csv(out_dir + "/aggregates.csv", "config_id,eval_width,mean,stddev,seeds");
  for (const auto& [config_id, widths] : by_config_width) {
    for (const auto& [width, accs] : widths) {
      double sum = 0.0;
      for (double a : accs) sum += a;
      const double mean = sum / static_cast<double>(accs.size());
      std::string stddev;
      if (accs.size() >= 2) {
        double sq = 0.0;
        for (double a : accs) sq += (a - mean) * (a - mean);
        stddev = format_double(std::sqrt(sq / static_cast<double>(accs.size() - 1)));
      }
      aggregate_csv.row(config_id, width, mean, stddev, accs.size());
    }
  }
}

}  // namespace osclab
