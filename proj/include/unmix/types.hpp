#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unmix/error.hpp"

namespace unmix {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Activation { Rect, Tanh, Logistic };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Rect: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Logistic: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu" || name == "rect") return Activation::Rect;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid" || name == "logistic") return Activation::Logistic;
  throw ValidationError("unknown activation \"" + name + "\"");
}

inline Matrix rectified(const Matrix& m) { return m.cwiseMax(0.0); }

inline Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::Rect: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Logistic:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  throw ValidationError("bad activation enum");
}

// Derivative of the activation expressed through its output value.
// For rect the subgradient at 0 is taken as 0.
inline Matrix activation_deriv(const Matrix& output, Activation a) {
  switch (a) {
    case Activation::Rect:
      return (output.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh:
      return (1.0 - output.array().square()).matrix();
    case Activation::Logistic:
      return (output.array() * (1.0 - output.array())).matrix();
  }
  throw ValidationError("bad activation enum");
}

/// Observation matrix X (bands x pixels) plus spatial layout.
/// Column n holds the spectrum of pixel n in row-major spatial order
/// (n = y * width + x).
struct HsiCube {
  Matrix data;  // P x N
  Index width = 0;
  Index height = 0;
  std::vector<double> wavelengths;  // optional, size P when present

  Index bands() const { return data.rows(); }
  Index pixels() const { return data.cols(); }
};

/// E (bands x K); columns are endmember spectra.
struct EndmemberMatrix {
  Matrix data;  // P x K

  Index bands() const { return data.rows(); }
  Index count() const { return data.cols(); }
};

/// A (K x pixels); row k holds the fractions of endmember k.
struct AbundanceMatrix {
  Matrix data;  // K x N

  Index count() const { return data.rows(); }
  Index pixels() const { return data.cols(); }
};

struct Hyperparams {
  double alpha = 0.5;   // auxiliary-task weight
  double beta = 0.01;   // decay weight
  double delta = 5.0;   // ASC strength
  Activation activation = Activation::Rect;
  std::vector<Index> widths_e;  // hidden widths of the endmember branch
  std::vector<Index> widths_a;  // hidden widths of the abundance branch
  Index iterations = 2000;

  // Width law: K < h_1 < ... < h_{L-1} < out_dim, at least one hidden layer.
  static void check_widths(const std::vector<Index>& widths, Index in_dim,
                           Index out_dim, const std::string& label) {
    if (widths.empty())
      throw ValidationError(label + ": no hidden width fits the chain " +
                            std::to_string(in_dim) + " < h < " +
                            std::to_string(out_dim) +
                            " (at least one hidden layer is required)");
    Index prev = in_dim;
    for (Index h : widths) {
      if (h <= prev)
        throw ValidationError(label + ": widths must satisfy " +
                              std::to_string(in_dim) + " < h_1 < ... < " +
                              std::to_string(out_dim));
      prev = h;
    }
    if (widths.back() >= out_dim)
      throw ValidationError(label + ": last hidden width " +
                            std::to_string(widths.back()) +
                            " must be below the output dimension " +
                            std::to_string(out_dim));
  }

  void validate(Index k, Index bands, Index pixels) const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      throw ValidationError("alpha must be a nonnegative real");
    if (!(beta >= 0.0) || !std::isfinite(beta))
      throw ValidationError("beta must be a nonnegative real");
    if (!(delta >= 0.0) || !std::isfinite(delta))
      throw ValidationError("delta must be a nonnegative real");
    if (iterations < 1)
      throw ValidationError("iterations must be a positive integer");
    check_widths(widths_e, k, pixels, "widths_e");
    check_widths(widths_a, k, bands, "widths_a");
  }
};

/// Checks shape bookkeeping and finiteness of a raw observation matrix.
inline HsiCube validate_cube(Matrix raw, Index width, Index height,
                             std::vector<double> wavelengths = {}) {
  if (width < 1 || height < 1)
    throw ValidationError("cube spatial size must be at least 1x1, got " +
                          std::to_string(width) + "x" + std::to_string(height));
  if (raw.rows() < 1) throw ValidationError("cube must have at least one band");
  if (raw.cols() != width * height)
    throw ValidationError(
        "cube shape mismatch: " + std::to_string(raw.cols()) +
        " pixel columns but width*height = " + std::to_string(width * height));
  for (Index n = 0; n < raw.cols(); ++n)
    for (Index p = 0; p < raw.rows(); ++p)
      if (!std::isfinite(raw(p, n)))
        throw ValidationError("non-finite value at band " + std::to_string(p) +
                              ", pixel " + std::to_string(n));
  if (!wavelengths.empty() &&
      static_cast<Index>(wavelengths.size()) != raw.rows())
    throw ValidationError("wavelength list length must equal the band count");
  return HsiCube{std::move(raw), width, height, std::move(wavelengths)};
}

struct NormalizedCube {
  HsiCube cube;
  double scale = 1.0;
};

/// Scales the cube by its global maximum so entries land in [min/scale, 1].
inline NormalizedCube normalize(const HsiCube& cube) {
  const double scale = cube.data.maxCoeff();
  if (!(scale > 0.0))
    throw ValidationError("degenerate cube: maximum entry is not positive");
  NormalizedCube out;
  out.cube.data = cube.data / scale;
  out.cube.width = cube.width;
  out.cube.height = cube.height;
  out.cube.wavelengths = cube.wavelengths;
  out.scale = scale;
  return out;
}

inline EndmemberMatrix denormalize_endmembers(const EndmemberMatrix& e,
                                              double scale) {
  if (!(scale > 0.0))
    throw ValidationError("scale must be positive, got " +
                          std::to_string(scale));
  return EndmemberMatrix{e.data * scale};
}

}  // namespace unmix
