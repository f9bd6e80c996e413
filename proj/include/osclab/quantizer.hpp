#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "osclab/matrix.hpp"

namespace osclab {

/// Fallback scale for an all-zero tensor; keeps q(0) = 0 while avoiding a
/// zero step size.
inline constexpr double kScaleFloor = 1e-8;

/// Bit-width descriptor for the uniform symmetric per-tensor quantizer.
/// Ternary (levels -1, 0, +1 times the scale) is arithmetically the same as
/// 2-bit under the symmetric-level rule but keeps its own label.
class QuantSpec {
 public:
  static QuantSpec ternary() { return QuantSpec(2, true); }

  static QuantSpec bits(int b) {
    if (b < 2 || b > 32) {
      throw ConfigError("QuantSpec: bit width must be in [2, 32], got " + std::to_string(b));
    }
    return QuantSpec(b, false);
  }

  int bit_width() const { return bits_; }
  bool is_ternary() const { return ternary_; }

  /// Number of positive quantization levels: 2^(b-1) - 1.
  std::int64_t positive_levels() const {
    return (std::int64_t{1} << (bits_ - 1)) - 1;
  }

  std::string label() const { return ternary_ ? "ternary" : std::to_string(bits_); }

  static QuantSpec parse(const std::string& text) {
    if (text == "ternary") return ternary();
    try {
      return bits(std::stoi(text));
    } catch (const std::exception&) {
      throw ConfigError("QuantSpec: cannot parse width '" + text + "'");
    }
  }

  friend bool operator==(const QuantSpec& a, const QuantSpec& b) {
    return a.bits_ == b.bits_ && a.ternary_ == b.ternary_;
  }

 private:
  QuantSpec(int b, bool t) : bits_(b), ternary_(t) {}
  int bits_;
  bool ternary_;
};

/// Round to nearest integer, ties to even. Independent of the FP
/// environment's rounding mode.
inline std::int64_t round_half_even_to_int(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  const auto fi = static_cast<std::int64_t>(f);
  if (frac > 0.5) return fi + 1;
  if (frac < 0.5) return fi;
  return (fi & 1) == 0 ? fi : fi + 1;
}

/// Per-tensor scale: max(|w|) divided by the number of positive levels.
/// An all-zero tensor gets the kScaleFloor fallback.
inline double scale_factor(const Matrix& w, QuantSpec spec) {
  if (w.empty()) throw ShapeError("scale_factor: empty tensor");
  const double peak = max_abs(w);
  if (peak == 0.0) return kScaleFloor;
  return peak / static_cast<double>(spec.positive_levels());
}

/// One tensor's quantization snapshot: the scale, the integer bin index
/// per weight, and the quantized values scale * bin.
struct QuantView {
  double scale = 0.0;
  std::vector<std::int64_t> bin_indices;
  Matrix values;
};

inline QuantView quantize_with_scale(const Matrix& w, double scale) {
  if (w.empty()) throw ShapeError("quantize: empty tensor");
  QuantView view;
  view.scale = scale;
  view.bin_indices.resize(w.size());
  view.values = Matrix(w.rows(), w.cols());
  auto wv = w.values();
  auto out = view.values.values();
  for (std::size_t i = 0; i < wv.size(); ++i) {
    const std::int64_t bin = round_half_even_to_int(wv[i] / scale);
    view.bin_indices[i] = bin;
    out[i] = scale * static_cast<double>(bin);
  }
  return view;
}

/// q(w) = s * round(w / s) with the per-tensor scale. The scale covers the
/// full range of w, so no clamping is involved.
inline QuantView quantize(const Matrix& w, QuantSpec spec) {
  return quantize_with_scale(w, scale_factor(w, spec));
}

inline double quantize_value(double w, double scale) {
  return scale * static_cast<double>(round_half_even_to_int(w / scale));
}

inline Matrix quant_error_with_scale(const Matrix& w, double scale) {
  return sub(w, quantize_with_scale(w, scale).values);
}

/// Elementwise w - q(w); each entry bounded by s/2 in magnitude.
inline Matrix quant_error(const Matrix& w, QuantSpec spec) {
  return quant_error_with_scale(w, scale_factor(w, spec));
}

/// Distances from w to the lower and upper threshold of its bin.
/// d_low + d_up = s; the nearer threshold has the smaller distance.
struct ThresholdDistances {
  double d_low = 0.0;
  double d_up = 0.0;
};

inline ThresholdDistances threshold_distances(double w, double scale) {
  const double q = quantize_value(w, scale);
  return ThresholdDistances{w - (q - scale / 2.0), (q + scale / 2.0) - w};
}

inline ThresholdDistances threshold_distances(double w, const QuantView& view) {
  return threshold_distances(w, view.scale);
}

}  // namespace osclab
