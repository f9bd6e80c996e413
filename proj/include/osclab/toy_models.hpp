#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "osclab/errors.hpp"
#include "osclab/oscillation.hpp"
#include "osclab/quantizer.hpp"

namespace osclab {

/// Single-weight regression toy: loss L(w) = 1/2 (x*w - y)^2 with a fixed
/// quantization grid of spacing `scale`. The scale is pinned rather than
/// derived from max|w| because a one-weight tensor would make the scale
/// track the weight and the bins degenerate.
struct ToyState {
  double w = 0.0;
  double x = 1.0;
  double y = 0.0;
  double scale = 1.0;
  double lr = 0.05;
};

/// Two-weight product toy: loss L = 1/2 (x*w1*w2 - y)^2, same fixed grid.
struct ToyTwoState {
  double w1 = 0.0;
  double w2 = 0.0;
  double x = 1.0;
  double y = 0.0;
  double scale = 1.0;
  double lr = 0.05;
};

inline double toy_loss_at(const ToyState& s, double w) {
  const double r = s.x * w - s.y;
  return 0.5 * r * r;
}

inline double toy_loss_at(const ToyTwoState& s, double w1, double w2) {
  const double r = s.x * w1 * w2 - s.y;
  return 0.5 * r * r;
}

/// The two terms of L(q(w)) - L(w): a quadratic term 1/2 x^2 (q(w)^2 - w^2)
/// and a linear term y x (w - q(w)). Their sum equals the loss gap exactly.
struct DeltaLoss {
  double quadratic = 0.0;
  double linear = 0.0;
  double total() const { return quadratic + linear; }
};

inline DeltaLoss delta_loss(const ToyState& s) {
  const double q = quantize_value(s.w, s.scale);
  DeltaLoss d;
  d.quadratic = 0.5 * s.x * s.x * (q * q - s.w * s.w);
  d.linear = s.y * s.x * (s.w - q);
  return d;
}

inline double toy_grad_fp(const ToyState& s) { return s.x * (s.x * s.w - s.y); }

inline double toy_grad_qat(const ToyState& s) {
  const double q = quantize_value(s.w, s.scale);
  return s.x * (s.x * q - s.y);
}

/// Straight-through gradient of the loss gap: x^2 (q(w) - w), i.e. minus
/// x^2 times the quantization error. Zero exactly on levels.
inline double ste_grad_delta_1w(const ToyState& s) {
  return s.x * s.x * (quantize_value(s.w, s.scale) - s.w);
}

/// STE gradients of the two-weight loss gap, split into the product-coupled
/// part that drives oscillations and the target-coupled part that damps
/// them. g_i = oscillator_i + dampener_i exactly.
struct TwoWeightGrad {
  double g1_oscillator = 0.0;
  double g1_dampener = 0.0;
  double g2_oscillator = 0.0;
  double g2_dampener = 0.0;
  double g1() const { return g1_oscillator + g1_dampener; }
  double g2() const { return g2_oscillator + g2_dampener; }
};

inline TwoWeightGrad ste_grad_delta_2w(const ToyTwoState& s) {
  const double q1 = quantize_value(s.w1, s.scale);
  const double q2 = quantize_value(s.w2, s.scale);
  const double x2 = s.x * s.x;
  TwoWeightGrad g;
  g.g1_oscillator = x2 * (q2 * q2 * q1 - s.w2 * s.w2 * s.w1);
  g.g1_dampener = s.y * s.x * (s.w2 - q2);
  g.g2_oscillator = x2 * (q1 * q1 * q2 - s.w1 * s.w1 * s.w2);
  g.g2_dampener = s.y * s.x * (s.w1 - q1);
  return g;
}

struct TrajectoryPoint {
  std::uint64_t step = 0;
  double w = 0.0;
  double q_w = 0.0;
  double grad_fp = 0.0;
  double grad_delta = 0.0;
  bool oscillated = false;
};

/// Plain gradient descent on the one-weight toy under the QAT gradient
/// (full-precision gradient plus the STE delta term). Point t records the
/// state before update t; the oscillation flag follows the two-condition
/// definition on the fixed grid's bin indices.
inline std::vector<TrajectoryPoint> simulate(ToyState state, std::uint64_t steps) {
  if (steps < 1) throw ConfigError("simulate: steps must be >= 1");
  std::vector<TrajectoryPoint> trajectory;
  trajectory.reserve(steps);
  OscillationTracker tracker(1);
  std::vector<std::int64_t> bin(1);
  for (std::uint64_t t = 0; t < steps; ++t) {
    if (std::abs(state.w) > 1e3 || !std::isfinite(state.w)) {
      throw NumericError("simulate: diverged at step " + std::to_string(t) +
                         " (w = " + std::to_string(state.w) + ")");
    }
    TrajectoryPoint p;
    p.step = t;
    p.w = state.w;
    p.q_w = quantize_value(state.w, state.scale);
    p.grad_fp = toy_grad_fp(state);
    p.grad_delta = ste_grad_delta_1w(state);
    bin[0] = round_half_even_to_int(state.w / state.scale);
    p.oscillated = tracker.observe(bin) > 0;
    trajectory.push_back(p);
    state.w -= state.lr * (p.grad_fp + p.grad_delta);
  }
  return trajectory;
}

}  // namespace osclab
