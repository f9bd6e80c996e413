// End-to-end acceptance checks. Each test prints one ACCEPTANCE line so a
// log scan shows every verdict without digging through the gtest output.
// The two training fixtures (the oscillation quartet and the robustness
// sweep) are built once and shared by the tests that read them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <gtest/gtest.h>
#include <iostream>
#include <string>
#include <vector>

#include "osclab/harness.hpp"
#include "osclab/toy_models.hpp"

namespace osclab {
namespace {

namespace fs = std::filesystem;

void report(int number, const char* label) {
  std::cout << "ACCEPTANCE " << number << ": "
            << (testing::Test::HasFailure() ? "FAIL" : "PASS") << " - " << label << "\n";
}

std::string fresh_dir(const std::string& name) {
  const std::string path = testing::TempDir() + "osclab_acceptance_" + name;
  fs::remove_all(path);
  fs::create_directories(path);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json blob_fixture() {
  return json{{"type", "blobs"}, {"seed", 7},        {"num_classes", 10},
              {"dims", 64},      {"per_class", 500}, {"spread", 1.5}};
}

double mean_of(const SweepReport& report, const std::string& config_id,
               const std::string& width) {
  for (const SweepAggregate& agg : report.aggregates) {
    if (agg.config_id == config_id && agg.eval_width == width) return agg.mean;
  }
  ADD_FAILURE() << "no aggregate for " << config_id << " at " << width;
  return 0.0;
}

const RunRecord& run_of(const SweepReport& report, const std::string& config_id) {
  for (const RunRecord& run : report.runs) {
    if (run.config_id == config_id) return run;
  }
  throw ContractError("acceptance: no run for config '" + config_id + "'");
}

// --- shared training fixtures ----------------------------------------------

// Quartet for the oscillation-statistics and clustering checks: one model
// family (5 hidden ReLU layers of 256) trained for a fixed 50 epochs at
// 3-bit under lambda in {0, 1, 10} plus a QAT run to compare against.
const SweepReport& oscillation_quartet() {
  static const SweepReport report = [] {
    SweepConfig config;
    config.dataset = blob_fixture();
    config.model.hidden_dim = 256;
    config.model.hidden_layers = 5;
    config.seeds = {1};
    config.eval_widths = {"3", "fp32"};

    TrainConfig train;
    train.spec = QuantSpec::bits(3);
    train.lr = 1e-3;
    train.max_epochs = 50;
    train.patience = 0;  // fixed-length runs; every epoch contributes counts
    train.batch_size = 64;

    for (double lambda : {0.0, 1.0, 10.0}) {
      TrainConfig reg = train;
      reg.regime = Regime::kOscReg;
      reg.lambda = lambda;
      config.configs.push_back({"lam" + std::to_string(static_cast<int>(lambda)), reg});
    }
    TrainConfig qat = train;
    qat.regime = Regime::kQAT;
    config.configs.push_back({"qat3", qat});

    config.compare = {{"lam0", "lam1"}, {"lam0", "lam10"}, {"lam0", "qat3"}};
    return sweep(config);
  }();
  return report;
}

// Five-seed sweep for the robustness and cross-bit checks. The baseline and
// the QAT runs use the reference recipe (lr 1e-3); the regularized runs use
// lr 4e-3 because the drift toward thresholds scales with the step size and
// is otherwise too slow to finish parking within the epoch budget.
const SweepReport& robustness_sweep() {
  static const SweepReport report = [] {
    SweepConfig config;
    config.dataset = blob_fixture();
    config.model.hidden_dim = 32;
    config.model.hidden_layers = 6;
    config.seeds = {1, 2, 3, 4, 5};
    config.eval_widths = {"ternary", "3", "4", "8", "fp32"};

    TrainConfig train;
    train.lr = 1e-3;
    train.max_epochs = 100;
    train.patience = 10;
    train.batch_size = 64;

    TrainConfig base = train;
    base.regime = Regime::kBaseline;
    config.configs.push_back({"base", base});

    for (const auto& [id, spec] :
         std::vector<std::pair<std::string, QuantSpec>>{{"qat4", QuantSpec::bits(4)},
                                                        {"qat3", QuantSpec::bits(3)},
                                                        {"qat_ternary", QuantSpec::ternary()}}) {
      TrainConfig qat = train;
      qat.regime = Regime::kQAT;
      qat.spec = spec;
      config.configs.push_back({id, qat});
    }

    for (const auto& [id, bits, lambda] :
         std::vector<std::tuple<std::string, int, double>>{{"osc4", 4, 1.0},
                                                           {"osc3", 3, 0.75}}) {
      TrainConfig reg = train;
      reg.regime = Regime::kOscReg;
      reg.spec = QuantSpec::bits(bits);
      reg.lambda = lambda;
      reg.lr = 4e-3;
      config.configs.push_back({id, reg});
    }

    config.compare = {{"qat4", "osc4"}, {"qat3", "osc3"}};
    return sweep(config);
  }();
  return report;
}

// --- fast property and oracle checks ----------------------------------------

TEST(Acceptance, ToyLimitCycle) {
  ToyState state;
  state.w = 0.3;
  state.x = 1.0;
  state.y = 0.75;
  state.scale = 1.0;
  state.lr = 0.05;
  const std::vector<TrajectoryPoint> trajectory = simulate(state, 2000);
  ASSERT_EQ(trajectory.size(), 2000u);

  // Once the transient has passed, q(w) must keep flipping between the two
  // levels bracketing the optimum and spend ~3/4 of the time at 1.
  double sum = 0.0;
  bool saw_zero = false;
  bool saw_one = false;
  for (std::size_t t = 1000; t < 2000; ++t) {
    const double q = trajectory[t].q_w;
    EXPECT_TRUE(q == 0.0 || q == 1.0) << "step " << t << " q=" << q;
    saw_zero = saw_zero || q == 0.0;
    saw_one = saw_one || q == 1.0;
    sum += q;
  }
  EXPECT_TRUE(saw_zero);
  EXPECT_TRUE(saw_one);
  const double mean_q = sum / 1000.0;
  EXPECT_GE(mean_q, 0.70);
  EXPECT_LE(mean_q, 0.80);
  report(1, "toy run settles into the 0/1 limit cycle with mean q(w) near 0.75");
}

TEST(Acceptance, GradientDecomposition) {
  Rng rng(11);
  for (int trial = 0; trial < 10000; ++trial) {
    ToyState s;
    s.w = (rng.next_double() - 0.5) * 8.0;
    s.x = (rng.next_double() - 0.5) * 4.0;
    s.y = (rng.next_double() - 0.5) * 4.0;
    s.scale = 0.25 * static_cast<double>(1 + rng.next_u64() % 8);
    EXPECT_NEAR(toy_grad_qat(s), toy_grad_fp(s) + ste_grad_delta_1w(s), 1e-12);
  }
  report(2, "QAT toy gradient equals the FP gradient plus the delta term");
}

TEST(Acceptance, ThresholdSignFlip) {
  // Dyadic scales and offsets keep every quantity exactly representable, so
  // the crossing identities can be asserted bitwise.
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const int exp = static_cast<int>(rng.next_u64() % 5) - 2;  // s in {0.25,...,4}
    const double s = std::ldexp(1.0, exp);
    const auto k = static_cast<std::int64_t>(rng.next_u64() % 9) - 4;
    const double level = static_cast<double>(k) * s;
    const auto j = static_cast<std::int64_t>(rng.next_u64() % 511) + 1;
    const double eps_prime = static_cast<double>(j) * std::ldexp(s, -10);
    const double w0 = level + s / 2.0;

    const double err_above = w0 + eps_prime - quantize_value(w0 + eps_prime, s);
    const double err_below = w0 - eps_prime - quantize_value(w0 - eps_prime, s);
    EXPECT_EQ(err_above, -s / 2.0 + eps_prime);
    EXPECT_EQ(err_below, s / 2.0 - eps_prime);
  }

  // Following the delta gradient alone must shrink the distance to the
  // nearer threshold at every off-level grid point.
  for (int i = 1; i < 200; ++i) {
    const double w = -2.0 + 0.02005 * i;  // grid avoiding exact levels/thresholds
    ToyState s;
    s.w = w;
    s.x = 1.0;
    s.scale = 0.5;
    const double g = ste_grad_delta_1w(s);
    if (g == 0.0) continue;  // exactly on a level
    const double stepped = w - 1e-3 * g;
    const auto before = threshold_distances(w, s.scale);
    const auto after = threshold_distances(stepped, s.scale);
    EXPECT_LT(std::min(after.d_low, after.d_up), std::min(before.d_low, before.d_up))
        << "w=" << w;
  }
  report(3, "quantization error flips sign across thresholds and delta steps approach them");
}

TEST(Acceptance, GradientCorrectness) {
  // Backprop against central finite differences on 20 random 3-layer MLPs.
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Model model = init_model(mlp_layers(4, 5, 2, 3), rng.split(1));
    const Matrix x = rand_normal(rng, 3, 4, 0.0, 1.0);
    const std::vector<int> labels = {0, 2, 1};
    const EvalMode mode = EvalMode::full_precision();

    const ForwardCache cache = forward_cached(model, x, mode);
    const Gradients grads = backward(model, cache, loss_softmax_ce(cache.logits, labels).second,
                                     mode);
    // The signs of every ReLU pre-activation; a central difference is only
    // valid while the perturbation leaves this pattern unchanged.
    const auto relu_pattern = [&]() {
      std::vector<bool> pattern;
      const ForwardCache c = forward_cached(model, x, mode);
      for (std::size_t l = 0; l < model.layer_count(); ++l) {
        if (model.layers[l].activation != Activation::kReLU) continue;
        for (double v : c.preacts[l].values()) pattern.push_back(v > 0.0);
      }
      return pattern;
    };
    const auto loss_at = [&]() {
      return loss_softmax_ce(forward(model, x, mode), labels).first;
    };
    const std::vector<bool> baseline_pattern = relu_pattern();
    const double h = 1e-6;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      for (Matrix* param : {&model.weights[l], &model.biases[l]}) {
        const Matrix& analytic = param == &model.weights[l] ? grads.weights[l] : grads.biases[l];
        for (std::size_t i = 0; i < param->size(); ++i) {
          double& theta = param->values()[i];
          const double saved = theta;
          theta = saved + h;
          const bool smooth_up = relu_pattern() == baseline_pattern;
          const double up = loss_at();
          theta = saved - h;
          const bool smooth_down = relu_pattern() == baseline_pattern;
          const double down = loss_at();
          theta = saved;
          if (!smooth_up || !smooth_down) continue;  // stencil crosses a kink
          const double numeric = (up - down) / (2.0 * h);
          const double reference = analytic.values()[i];
          const double denom = std::max({std::abs(numeric), std::abs(reference), 1e-4});
          EXPECT_LT(std::abs(numeric - reference) / denom, 1e-6)
              << "seed=" << seed << " layer=" << l << " index=" << i;
        }
      }
    }
  }

  // The regularizer gradient must equal its closed form bitwise, and the
  // -w^2 part must agree with finite differences away from thresholds
  // (where the quantized term is locally constant).
  Rng rng(77);
  Model model = init_model(mlp_layers(4, 5, 2, 3), rng.split(1));
  const QuantSpec spec = QuantSpec::bits(3);
  const double lambda = 0.7;
  const std::vector<double> scales = current_scales(model, spec);
  const Gradients reg = reg_grad_with_scales(model, scales, lambda);
  const double h = 1e-6;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const double coeff = lambda / static_cast<double>(model.weights[l].size());
    for (std::size_t i = 0; i < model.weights[l].size(); ++i) {
      double& w = model.weights[l].values()[i];
      const double q = quantize_value(w, scales[l]);
      EXPECT_EQ(reg.weights[l].values()[i], coeff * (q - w));

      const auto dist = threshold_distances(w, scales[l]);
      if (std::min(dist.d_low, dist.d_up) < 1e-3) continue;
      const double saved = w;
      w = saved + h;
      const double up = reg_value_with_scales(model, scales, lambda);
      w = saved - h;
      const double down = reg_value_with_scales(model, scales, lambda);
      w = saved;
      // q(w) is constant near w, so the whole finite difference is the
      // derivative of the -w^2 portion.
      EXPECT_NEAR((up - down) / (2.0 * h), -coeff * saved, 1e-6);
      EXPECT_NEAR((up - down) / (2.0 * h), reg.weights[l].values()[i] - coeff * q, 1e-6);
    }
    for (double b : reg.biases[l].values()) EXPECT_EQ(b, 0.0);
  }
  report(4, "backprop matches finite differences and the regularizer gradient its closed form");
}

TEST(Acceptance, OscillationDetectorOracle) {
  // Literal reading of the two-condition definition: for each bin change,
  // scan backwards for the previous change and compare direction signs.
  const auto brute_force_count = [](const std::vector<std::int64_t>& sequence) {
    std::uint64_t count = 0;
    for (std::size_t t = 1; t < sequence.size(); ++t) {
      if (sequence[t] == sequence[t - 1]) continue;
      const int dir_t = sequence[t] > sequence[t - 1] ? 1 : -1;
      for (std::size_t tau = t - 1; tau >= 1; --tau) {
        if (sequence[tau] == sequence[tau - 1]) continue;
        const int dir_tau = sequence[tau] > sequence[tau - 1] ? 1 : -1;
        if (dir_t != dir_tau) ++count;
        break;
      }
    }
    return count;
  };

  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t length = rng.next_u64() % 51;
    std::vector<std::int64_t> sequence(length);
    for (auto& bin : sequence) bin = static_cast<std::int64_t>(rng.next_u64() % 5) - 2;

    OscillationTracker tracker(1);
    for (std::int64_t bin : sequence) tracker.observe(std::vector<std::int64_t>{bin});
    EXPECT_EQ(tracker.counts()[0], brute_force_count(sequence));
  }
  report(9, "oscillation tracker matches the brute-force two-condition definition");
}

TEST(Acceptance, WelchOracle) {
  const WelchResult r = welch_t(std::vector<double>{1.0, 2.0, 3.0},
                                std::vector<double>{4.0, 5.0, 6.0});
  EXPECT_NEAR(r.t, -3.674, 1e-3);
  EXPECT_NEAR(r.df, 4.0, 1e-9);

  // Reference p-values from an independent high-precision implementation of
  // the Student-t survival function.
  EXPECT_NEAR(student_t_two_sided_p(1.0, 1.0), 0.49999999999999956, 1e-6);
  EXPECT_NEAR(student_t_two_sided_p(2.5, 4.0), 0.06676654481198813, 1e-6);
  EXPECT_NEAR(student_t_two_sided_p(-3.674234614174767, 4.0), 0.021311641128756727, 1e-6);
  EXPECT_NEAR(student_t_two_sided_p(0.5, 10.0), 0.6278936057429729, 1e-6);
  EXPECT_NEAR(student_t_two_sided_p(6.0, 2.5), 0.015281729885522894, 1e-6);
  report(10, "Welch statistic and p-values match the hand-computed references");
}

TEST(Acceptance, TwoWeightDeltaGradient) {
  Rng rng(43);
  for (int trial = 0; trial < 10000; ++trial) {
    ToyTwoState s;
    s.w1 = (rng.next_double() - 0.5) * 6.0;
    s.w2 = (rng.next_double() - 0.5) * 6.0;
    s.x = (rng.next_double() - 0.5) * 4.0;
    s.y = (rng.next_double() - 0.5) * 4.0;
    s.scale = 0.25 * static_cast<double>(1 + rng.next_u64() % 8);
    const double q1 = quantize_value(s.w1, s.scale);
    const double q2 = quantize_value(s.w2, s.scale);

    const TwoWeightGrad g = ste_grad_delta_2w(s);
    EXPECT_NEAR(g.g1_oscillator, s.x * s.x * (q2 * q2 * q1 - s.w2 * s.w2 * s.w1), 1e-12);
    EXPECT_NEAR(g.g1_dampener, s.y * s.x * (s.w2 - q2), 1e-12);
    EXPECT_NEAR(g.g2_oscillator, s.x * s.x * (q1 * q1 * q2 - s.w1 * s.w1 * s.w2), 1e-12);
    EXPECT_NEAR(g.g2_dampener, s.y * s.x * (s.w1 - q1), 1e-12);
    EXPECT_EQ(g.g1(), g.g1_oscillator + g.g1_dampener);
    EXPECT_EQ(g.g2(), g.g2_oscillator + g.g2_dampener);
  }

  // Both weights exactly on levels: the delta gradient vanishes entirely.
  Rng level_rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    ToyTwoState s;
    s.scale = std::ldexp(1.0, static_cast<int>(level_rng.next_u64() % 5) - 2);
    s.w1 = static_cast<double>(static_cast<std::int64_t>(level_rng.next_u64() % 9) - 4) * s.scale;
    s.w2 = static_cast<double>(static_cast<std::int64_t>(level_rng.next_u64() % 9) - 4) * s.scale;
    s.x = (level_rng.next_double() - 0.5) * 4.0;
    s.y = (level_rng.next_double() - 0.5) * 4.0;
    const TwoWeightGrad g = ste_grad_delta_2w(s);
    EXPECT_EQ(g.g1(), 0.0);
    EXPECT_EQ(g.g2(), 0.0);
  }
  report(11, "two-weight delta gradient matches its closed form and vanishes on levels");
}

TEST(Acceptance, Determinism) {
  ExperimentConfig config;
  config.config_id = "repeat";
  config.dataset = json{{"type", "blobs"}, {"seed", 13},      {"num_classes", 3},
                        {"dims", 8},       {"per_class", 40}, {"spread", 0.8}};
  config.model.hidden_dim = 12;
  config.model.hidden_layers = 2;
  config.train.regime = Regime::kQAT;
  config.train.spec = QuantSpec::ternary();
  config.train.lr = 0.01;
  config.train.max_epochs = 6;
  config.train.patience = 0;
  config.train.batch_size = 32;
  config.train.seed = 5;
  config.eval_widths = {"fp32", "8", "4"};

  config.output.dir = fresh_dir("determinism_a");
  run_experiment(config);
  const std::string first = slurp(config.output.dir + "/metrics.csv");
  config.output.dir = fresh_dir("determinism_b");
  run_experiment(config);
  const std::string second = slurp(config.output.dir + "/metrics.csv");

  EXPECT_FALSE(first.empty());
  EXPECT_EQ(first, second);
  report(12, "identical config and seed reproduce bitwise-identical metric CSVs");
}

// --- training-based pattern checks ------------------------------------------

TEST(Acceptance, OscillationStatistics) {
  const SweepReport& quartet = oscillation_quartet();

  ASSERT_EQ(quartet.welch.size(), 3u);
  for (const WelchRow& row : quartet.welch) {
    EXPECT_LT(row.result.p, 0.001) << row.config_a << " vs " << row.config_b;
  }

  const double frac0 = run_of(quartet, "lam0").fraction_oscillating;
  const double frac1 = run_of(quartet, "lam1").fraction_oscillating;
  const double frac10 = run_of(quartet, "lam10").fraction_oscillating;
  EXPECT_LE(frac0, frac1);
  EXPECT_LE(frac1, frac10);
  report(5, "regularized and QAT oscillation counts differ from plain training");
}

TEST(Acceptance, ThresholdClustering) {
  const SweepReport& quartet = oscillation_quartet();
  const double near0 = run_of(quartet, "lam0").near_threshold_first_layer;
  const double near1 = run_of(quartet, "lam1").near_threshold_first_layer;
  const double near10 = run_of(quartet, "lam10").near_threshold_first_layer;
  EXPECT_GT(near1, near0);
  EXPECT_GT(near10, near1);
  report(6, "near-threshold weight fraction grows with the regularization strength");
}

TEST(Acceptance, RobustnessRecovery) {
  const SweepReport& r = robustness_sweep();
  const double ptq4 = mean_of(r, "base", "4");
  const double ptq3 = mean_of(r, "base", "3");
  const double qat4 = mean_of(r, "qat4", "4");
  const double osc4 = mean_of(r, "osc4", "4");

  EXPECT_LE(std::abs(osc4 - qat4), 0.02);
  EXPECT_GE(qat4, ptq4 + 0.03);
  EXPECT_GE(osc4, ptq4 + 0.03);
  EXPECT_GE(mean_of(r, "qat3", "3"), ptq3 + 0.10);
  EXPECT_GE(mean_of(r, "osc3", "3"), ptq3 + 0.10);
  report(7, "regularized training recovers QAT-level target-bit accuracy over PTQ");
}

TEST(Acceptance, CrossBitAsymmetry) {
  const SweepReport& r = robustness_sweep();
  const double base_fp = mean_of(r, "base", "fp32");

  EXPECT_LE(std::abs(mean_of(r, "osc3", "fp32") - base_fp), 0.02);
  EXPECT_LE(std::abs(mean_of(r, "osc3", "8") - base_fp), 0.02);
  EXPECT_LE(mean_of(r, "qat_ternary", "fp32"), base_fp - 0.15);
  report(8, "regularized 3-bit models keep FP32/8-bit accuracy while ternary QAT collapses");
}

}  // namespace
}  // namespace osclab
