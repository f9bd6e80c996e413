// Command-line front end: toy-model trajectories, single training runs,
// cross-bit evaluation of checkpoints, config x seed sweeps, and report
// aggregation. Every flag mirrors a config-file field and a flag given on
// the command line always wins over the file.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "osclab/osclab.hpp"

namespace {

using osclab::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct TrainFlags {
  std::string config_path;
  std::string config_id;
  std::string regime;
  std::string width;
  double lambda = 0.0;
  double lr = 0.0;
  std::size_t max_epochs = 0;
  std::size_t patience = 0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  bool scale_frozen = false;
  bool track_per_step = false;
  std::string out_dir;
  bool osc_log = false;
  bool osc_counts = false;
  bool no_checkpoint = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Experiment config JSON");
  cmd->add_option("--config-id", flags.config_id, "Run identifier used in outputs");
  cmd->add_option("--regime", flags.regime, "baseline | qat | oscreg");
  cmd->add_option("--width", flags.width, "Target width: ternary, 2..32, or fp32");
  cmd->add_option("--lambda", flags.lambda, "Regularization strength (oscreg)");
  cmd->add_option("--lr", flags.lr, "Adam learning rate");
  cmd->add_option("--epochs", flags.max_epochs, "Maximum training epochs");
  cmd->add_option("--patience", flags.patience, "Early-stop patience; 0 disables");
  cmd->add_option("--batch-size", flags.batch_size, "Mini-batch size");
  cmd->add_option("--seed", flags.seed, "Run seed");
  cmd->add_flag("--scale-frozen", flags.scale_frozen, "Pin quantizer scales to initial weights");
  cmd->add_flag("--track-per-step", flags.track_per_step, "Track oscillations every step");
  cmd->add_option("--out-dir", flags.out_dir, "Artifact directory");
  cmd->add_flag("--osc-log", flags.osc_log, "Write per-epoch bin-index log (first layer)");
  cmd->add_flag("--osc-counts", flags.osc_counts, "Write final per-weight oscillation counts");
  cmd->add_flag("--no-checkpoint", flags.no_checkpoint, "Skip writing checkpoint.oscl");
}

json default_blobs_dataset() {
  return json{{"type", "blobs"}, {"seed", 7},       {"num_classes", 10},
              {"dims", 64},      {"per_class", 500}, {"spread", 1.5}};
}

osclab::ExperimentConfig resolve_experiment(const CLI::App* cmd, const TrainFlags& flags) {
  osclab::ExperimentConfig config;
  if (!flags.config_path.empty()) {
    config = osclab::parse_experiment_config(osclab::load_json_file(flags.config_path));
  } else {
    config.dataset = default_blobs_dataset();
  }
  const auto given = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (given("--config-id")) config.config_id = flags.config_id;
  if (given("--regime")) config.train.regime = osclab::parse_regime(flags.regime);
  if (given("--width")) {
    config.train.spec = flags.width == "fp32"
                            ? std::optional<osclab::QuantSpec>()
                            : std::optional<osclab::QuantSpec>(osclab::QuantSpec::parse(flags.width));
  }
  if (given("--lambda")) config.train.lambda = flags.lambda;
  if (given("--lr")) config.train.lr = flags.lr;
  if (given("--epochs")) config.train.max_epochs = flags.max_epochs;
  if (given("--patience")) config.train.patience = flags.patience;
  if (given("--batch-size")) config.train.batch_size = flags.batch_size;
  if (given("--seed")) config.train.seed = flags.seed;
  if (given("--scale-frozen")) config.train.scale_frozen = flags.scale_frozen;
  if (given("--track-per-step")) config.train.track_per_step = flags.track_per_step;
  if (given("--out-dir")) config.output.dir = flags.out_dir;
  if (given("--osc-log")) config.output.osc_log = flags.osc_log;
  if (given("--osc-counts")) config.output.osc_counts = flags.osc_counts;
  if (given("--no-checkpoint")) config.output.checkpoint = !flags.no_checkpoint;
  config.train.validate();
  return config;
}

int cmd_toy(double x, double y, double scale, double lr, double w0, std::uint64_t steps,
            const std::string& out_path) {
  osclab::ToyState state;
  state.x = x;
  state.y = y;
  state.scale = scale;
  state.lr = lr;
  state.w = w0;
  const auto trajectory = osclab::simulate(state, steps);
  if (!out_path.empty()) {
    osclab::CsvWriter csv(out_path, "step,w,q_w,grad_fp,grad_delta,oscillation_flag");
    for (const auto& p : trajectory) {
      csv.row(p.step, p.w, p.q_w, p.grad_fp, p.grad_delta, p.oscillated ? 1 : 0);
    }
  }
  double q_sum = 0.0;
  std::uint64_t oscillations = 0;
  const std::size_t half = trajectory.size() / 2;
  for (std::size_t i = half; i < trajectory.size(); ++i) q_sum += trajectory[i].q_w;
  for (const auto& p : trajectory) oscillations += p.oscillated ? 1 : 0;
  std::cout << "steps=" << trajectory.size() << " final_w=" << osclab::format_double(trajectory.back().w)
            << " mean_q_last_half="
            << osclab::format_double(q_sum / static_cast<double>(trajectory.size() - half))
            << " oscillations=" << oscillations << "\n";
  return kExitOk;
}

int cmd_train(const CLI::App* cmd, const TrainFlags& flags) {
  const osclab::ExperimentConfig config = resolve_experiment(cmd, flags);
  const osclab::ExperimentResult result = osclab::run_experiment(config);
  std::cout << "config_id=" << result.record.config_id << " regime=" << result.record.regime
            << " width=" << result.record.width << " seed=" << result.record.seed
            << " best_epoch=" << result.record.best_epoch << " best_val_metric="
            << osclab::format_double(result.record.best_val_metric) << "\n";
  for (const auto& [width, acc] : result.record.cross_bit) {
    std::cout << "eval_width=" << width << " accuracy=" << osclab::format_double(acc) << "\n";
  }
  return kExitOk;
}

int cmd_crossbit(const std::string& checkpoint, const std::string& config_path,
                 const std::vector<std::string>& widths, const std::string& out_path) {
  const osclab::Model model = osclab::load_model(checkpoint);
  json dataset_block = default_blobs_dataset();
  if (!config_path.empty()) {
    const json root = osclab::load_json_file(config_path);
    if (!root.contains("dataset")) {
      throw osclab::ConfigError("crossbit: config '" + config_path + "' has no dataset block");
    }
    dataset_block = root.at("dataset");
  }
  const osclab::Dataset data = osclab::build_dataset(dataset_block);
  const osclab::SplitView test = data.view(osclab::Split::kTest);
  const auto row = osclab::cross_bit_eval(model, widths, test.features, test.labels);
  if (!out_path.empty()) {
    osclab::CsvWriter csv(out_path, "eval_width,accuracy");
    for (const auto& [width, acc] : row) csv.row(width, acc);
  }
  for (const auto& [width, acc] : row) {
    std::cout << "eval_width=" << width << " accuracy=" << osclab::format_double(acc) << "\n";
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir) {
  osclab::SweepConfig config = osclab::parse_sweep_config(osclab::load_json_file(config_path));
  if (!out_dir.empty()) config.output.dir = out_dir;
  const osclab::SweepReport report = osclab::sweep(config);
  for (const auto& agg : report.aggregates) {
    std::cout << "config=" << agg.config_id << " eval_width=" << agg.eval_width
              << " mean=" << osclab::format_double(agg.mean) << " seeds=" << agg.seeds << "\n";
  }
  for (const auto& row : report.welch) {
    std::cout << "welch " << row.config_a << " vs " << row.config_b
              << " t=" << osclab::format_double(row.result.t)
              << " df=" << osclab::format_double(row.result.df)
              << " p=" << osclab::format_double(row.result.p) << "\n";
  }
  return kExitOk;
}

int cmd_report(const std::string& dir, const std::string& out_dir) {
  const auto records = osclab::collect_run_records(dir);
  osclab::write_report(records, out_dir);
  std::cout << "aggregated " << records.size() << " run records into " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization oscillation laboratory"};
  app.require_subcommand(1);

  // toy
  auto* toy = app.add_subcommand("toy", "Simulate the one-weight toy model");
  double toy_x = 1.0, toy_y = 0.75, toy_scale = 1.0, toy_lr = 0.05, toy_w0 = 0.3;
  std::uint64_t toy_steps = 2000;
  std::string toy_out;
  toy->add_option("--x", toy_x, "Input value");
  toy->add_option("--y", toy_y, "Regression target");
  toy->add_option("--scale", toy_scale, "Fixed quantizer scale");
  toy->add_option("--lr", toy_lr, "Gradient-descent step size");
  toy->add_option("--w0", toy_w0, "Initial weight");
  toy->add_option("--steps", toy_steps, "Number of steps");
  toy->add_option("--out", toy_out, "Trajectory CSV path");

  // train
  auto* train = app.add_subcommand("train", "Run one training experiment");
  TrainFlags train_flags;
  add_train_flags(train, train_flags);

  // crossbit
  auto* crossbit = app.add_subcommand("crossbit", "Evaluate a checkpoint across bit widths");
  std::string cb_checkpoint, cb_config, cb_out;
  std::vector<std::string> cb_widths = {"ternary", "3", "4", "8", "fp32"};
  crossbit->add_option("--checkpoint", cb_checkpoint, "Model checkpoint path")->required();
  crossbit->add_option("--config", cb_config, "Config JSON supplying the dataset block");
  crossbit->add_option("--widths", cb_widths, "Evaluation widths");
  crossbit->add_option("--out", cb_out, "Accuracy CSV path");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a config x seed matrix with statistics");
  std::string sweep_config, sweep_out;
  sweep_cmd->add_option("--config", sweep_config, "Sweep config JSON")->required();
  sweep_cmd->add_option("--out-dir", sweep_out, "Artifact directory override");

  // report
  auto* report = app.add_subcommand("report", "Aggregate persisted run records");
  std::string report_dir, report_out;
  report->add_option("--dir", report_dir, "Directory scanned for run_record.json files")
      ->required();
  report->add_option("--out-dir", report_out, "Report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (toy->parsed()) return cmd_toy(toy_x, toy_y, toy_scale, toy_lr, toy_w0, toy_steps, toy_out);
    if (train->parsed()) return cmd_train(train, train_flags);
    if (crossbit->parsed()) return cmd_crossbit(cb_checkpoint, cb_config, cb_widths, cb_out);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_config, sweep_out);
    if (report->parsed()) return cmd_report(report_dir, report_out);
  } catch (const osclab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const osclab::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
