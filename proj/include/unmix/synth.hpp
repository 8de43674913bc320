#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "unmix/error.hpp"
#include "unmix/rng.hpp"
#include "unmix/types.hpp"

namespace unmix {

enum class MixingModel { LMM, Bilinear, PNMM };

inline const char* mixing_model_name(MixingModel m) {
  switch (m) {
    case MixingModel::LMM: return "lmm";
    case MixingModel::Bilinear: return "bilinear";
    case MixingModel::PNMM: return "pnmm";
  }
  return "?";
}

inline MixingModel mixing_model_from_name(const std::string& name) {
  if (name == "lmm") return MixingModel::LMM;
  if (name == "bilinear") return MixingModel::Bilinear;
  if (name == "pnmm") return MixingModel::PNMM;
  throw ValidationError("unknown mixing model \"" + name + "\"");
}

/// Sentinel for "no noise" in SNR fields.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct SceneTruth {
  EndmemberMatrix endmembers;
  AbundanceMatrix abundances;
  MixingModel model = MixingModel::LMM;
  double snr_db = kNoNoise;
  std::uint64_t seed = 0;
};

namespace detail {

// One smooth spectrum: a low-order random cosine series stretched into a
// random reflectance range, minus a few Gaussian absorption dips.  The
// broadband shape (not just the dips) varies per draw, so distinct draws
// subtend useful spectral angles instead of clustering around a shared
// continuum.  Dip depths are budgeted so the result stays strictly positive
// without clamping.
inline Vector continuum_spectrum(Index bands, Rng& rng) {
  constexpr int kOrder = 5;
  double coef[kOrder];
  double scale = 1.0;
  for (double& c : coef) {
    c = rng.uniform(-scale, scale);
    scale *= 0.6;
  }
  Vector s(bands);
  for (Index p = 0; p < bands; ++p) {
    const double t = static_cast<double>(p) / static_cast<double>(bands - 1);
    double v = 0.0;
    for (int m = 0; m < kOrder; ++m)
      v += coef[m] * std::cos(std::numbers::pi * (m + 1) * t);
    s[p] = v;
  }
  const double lo = rng.uniform(0.05, 0.3);
  const double hi = rng.uniform(0.55, 0.95);
  const double smin = s.minCoeff();
  const double span = std::max(s.maxCoeff() - smin, 1e-12);
  s = ((s.array() - smin) / span * (hi - lo) + lo).matrix();

  const int dips = 2 + static_cast<int>(rng.uniform_index(4));  // 2..5
  const double budget = (lo - 0.02) / dips;
  for (int d = 0; d < dips; ++d) {
    const double center = rng.uniform(0.0, static_cast<double>(bands - 1));
    const double sigma =
        std::max(0.75, rng.uniform(bands / 60.0, bands / 12.0));
    const double depth = rng.uniform(0.1, 1.0) * budget;
    for (Index p = 0; p < bands; ++p) {
      const double z = (p - center) / sigma;
      s[p] -= depth * std::exp(-0.5 * z * z);
    }
  }
  return s;
}

inline double spectral_angle(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

}  // namespace detail

/// K smooth spectra in [0,1] with pairwise spectral angle >= 0.1 rad.
inline EndmemberMatrix gen_endmembers(Index bands, Index k,
                                      std::uint64_t seed) {
  if (k < 1) throw ValidationError("endmember count must be >= 1");
  if (bands < 2 * k)
    throw ValidationError("need at least 2K bands, got P=" +
                          std::to_string(bands) + " for K=" +
                          std::to_string(k));
  Rng rng(seed);
  Matrix e(bands, k);
  int resamples = 0;
  for (Index j = 0; j < k; ++j) {
    for (;;) {
      Vector candidate = detail::continuum_spectrum(bands, rng);
      bool separated = true;
      for (Index i = 0; i < j; ++i)
        if (detail::spectral_angle(e.col(i), candidate) < 0.1) {
          separated = false;
          break;
        }
      if (separated) {
        e.col(j) = candidate;
        break;
      }
      if (++resamples > 100)
        throw ValidationError(
            "endmember separation unachievable after 100 resamples");
    }
  }
  return EndmemberMatrix{std::move(e)};
}

/// Columns i.i.d. Dirichlet(concentration * 1_K).
inline AbundanceMatrix sample_abundances(Index k, Index pixels,
                                         double concentration,
                                         std::uint64_t seed) {
  if (k < 1) throw ValidationError("endmember count must be >= 1");
  if (pixels < 1) throw ValidationError("pixel count must be >= 1");
  if (!(concentration > 0.0) || !std::isfinite(concentration))
    throw ValidationError("Dirichlet concentration must be positive");
  Matrix a(k, pixels);
  if (k == 1) {
    a.setOnes();
    return AbundanceMatrix{std::move(a)};
  }
  Rng rng(seed);
  for (Index n = 0; n < pixels; ++n) {
    double sum = 0.0;
    do {
      sum = 0.0;
      for (Index i = 0; i < k; ++i) {
        const double g = rng.gamma(concentration);
        a(i, n) = g;
        sum += g;
      }
    } while (!(sum > 0.0));  // all-zero draw is possible for tiny shapes
    a.col(n) /= sum;
  }
  return AbundanceMatrix{std::move(a)};
}

/// Noise-free mixing under the chosen model; returns the raw P x N matrix.
inline Matrix mix(const EndmemberMatrix& e, const AbundanceMatrix& a,
                  MixingModel model) {
  if (e.count() != a.count())
    throw ValidationError("endmember/abundance K mismatch: " +
                          std::to_string(e.count()) + " vs " +
                          std::to_string(a.count()));
  Matrix x = e.data * a.data;
  switch (model) {
    case MixingModel::LMM:
      break;
    case MixingModel::Bilinear:
      // x_n += sum_{i<j} a_i a_j (e_i .* e_j), as rank-one updates
      for (Index i = 0; i + 1 < e.count(); ++i)
        for (Index j = i + 1; j < e.count(); ++j)
          x.noalias() += (e.data.col(i).cwiseProduct(e.data.col(j))) *
                         (a.data.row(i).cwiseProduct(a.data.row(j)));
      break;
    case MixingModel::PNMM:
      x += (e.data * a.data).cwiseProduct(e.data * a.data).eval();
      break;
  }
  return x;
}

/// Adds i.i.d. zero-mean Gaussian noise calibrated to the target SNR over
/// the whole-matrix Frobenius energy. +inf passes the input through.
inline Matrix add_noise(const Matrix& x, double snr_db, std::uint64_t seed) {
  if (snr_db == kNoNoise) return x;
  if (!x.allFinite()) throw ValidationError("noise input must be finite");
  const double energy = x.squaredNorm();
  if (!(energy > 0.0)) throw ValidationError("cannot scale noise to an all-zero matrix");
  const double n_entries = static_cast<double>(x.rows()) * x.cols();
  const double sigma =
      std::sqrt(energy / (n_entries * std::pow(10.0, snr_db / 10.0)));
  Rng rng(seed);
  Matrix noisy = x;
  for (Index n = 0; n < x.cols(); ++n)
    for (Index p = 0; p < x.rows(); ++p) noisy(p, n) += sigma * rng.normal();
  return noisy;
}

struct Scene {
  HsiCube cube;
  SceneTruth truth;
};

/// Deterministic composition: endmembers, abundances, mixing, noise.
inline Scene make_scene(Index bands, Index width, Index height, Index k,
                        MixingModel model, double snr_db, double concentration,
                        std::uint64_t seed) {
  if (width < 1 || height < 1)
    throw ValidationError("scene size must be at least 1x1");
  const Index pixels = width * height;
  EndmemberMatrix e = gen_endmembers(bands, k, derive_seed(seed, 1));
  AbundanceMatrix a =
      sample_abundances(k, pixels, concentration, derive_seed(seed, 2));
  Matrix x = add_noise(mix(e, a, model), snr_db, derive_seed(seed, 3));
  Scene scene;
  scene.cube = validate_cube(std::move(x), width, height);
  scene.truth = SceneTruth{std::move(e), std::move(a), model, snr_db, seed};
  return scene;
}

}  // namespace unmix
