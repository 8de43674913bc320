#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "unmix/error.hpp"
#include "unmix/rng.hpp"
#include "unmix/types.hpp"

namespace unmix {

enum class InitMethod { VcaLike, RandomPixels, Provided };

inline const char* init_method_name(InitMethod m) {
  switch (m) {
    case InitMethod::VcaLike: return "vca_like";
    case InitMethod::RandomPixels: return "random_pixels";
    case InitMethod::Provided: return "provided";
  }
  return "?";
}

struct InitReport {
  std::vector<Index> endmember_indices;
  InitMethod method = InitMethod::Provided;
};

struct EndmemberInit {
  EndmemberMatrix endmembers;
  InitReport report;
};

/// Extreme-projection extractor: project onto the top-K singular subspace,
/// then repeatedly pick the pixel with the largest |projection| onto a random
/// direction orthogonal to the endmembers found so far.
inline EndmemberInit vca_init(const HsiCube& x, Index k, std::uint64_t seed) {
  const Index bands = x.bands(), pixels = x.pixels();
  if (k < 1) throw ValidationError("endmember count must be >= 1");
  if (k > std::min(bands, pixels))
    throw ValidationError("endmember count " + std::to_string(k) +
                          " exceeds min(P, N) = " +
                          std::to_string(std::min(bands, pixels)));

  // Top-K spectral subspace from the band covariance (P x P, symmetric).
  Eigen::SelfAdjointEigenSolver<Matrix> eig(x.data * x.data.transpose());
  if (eig.info() != Eigen::Success)
    throw NumericError("eigendecomposition failed on the band covariance");
  // Eigenvalues come out ascending; the top K live in the last K columns.
  const Matrix basis = eig.eigenvectors().rightCols(k);  // P x K
  const Vector evals = eig.eigenvalues();
  const double top = evals(bands - 1);
  if (!(top > 0.0) || evals(bands - k) <= top * 1e-12)
    throw NumericError("data rank below K: singular subspace is degenerate");
  const Matrix y = basis.transpose() * x.data;  // K x N projected pixels

  Rng rng(seed);
  std::vector<Index> chosen;
  Matrix ortho(k, k);  // orthonormal basis of the chosen pixels' span
  Index span = 0;
  while (static_cast<Index>(chosen.size()) < k) {
    Vector w(k);
    for (Index i = 0; i < k; ++i) w[i] = rng.normal();
    // Orthogonalize against the span of already-chosen projected pixels.
    for (Index j = 0; j < span; ++j) w -= ortho.col(j).dot(w) * ortho.col(j);
    const double wn = w.norm();
    if (wn < 1e-12) continue;  // unlucky draw, retry
    w /= wn;

    Index best = 0;
    double best_mag = -1.0;
    for (Index n = 0; n < pixels; ++n) {
      const double mag = std::abs(w.dot(y.col(n)));
      if (mag > best_mag) {
        best_mag = mag;
        best = n;
      }
    }
    if (std::find(chosen.begin(), chosen.end(), best) != chosen.end())
      throw NumericError("extractor stalled: data rank below K");
    chosen.push_back(best);

    Vector v = y.col(best);
    for (Index j = 0; j < span; ++j) v -= ortho.col(j).dot(v) * ortho.col(j);
    const double vn = v.norm();
    if (vn >= 1e-12) ortho.col(span++) = v / vn;
  }

  Matrix e(bands, k);
  for (Index j = 0; j < k; ++j) e.col(j) = x.data.col(chosen[j]);
  return EndmemberInit{EndmemberMatrix{std::move(e)},
                       InitReport{std::move(chosen), InitMethod::VcaLike}};
}

/// K distinct uniformly chosen pixel columns.
inline EndmemberInit random_pixel_init(const HsiCube& x, Index k,
                                       std::uint64_t seed) {
  const Index pixels = x.pixels();
  if (k < 1) throw ValidationError("endmember count must be >= 1");
  if (k > pixels)
    throw ValidationError("endmember count exceeds the pixel count");
  // Partial Fisher-Yates over pixel indices.
  std::vector<Index> idx(pixels);
  for (Index n = 0; n < pixels; ++n) idx[n] = n;
  Rng rng(seed);
  for (Index j = 0; j < k; ++j) {
    const Index swap = j + static_cast<Index>(rng.uniform_index(
                               static_cast<std::uint64_t>(pixels - j)));
    std::swap(idx[j], idx[swap]);
  }
  idx.resize(k);
  Matrix e(x.bands(), k);
  for (Index j = 0; j < k; ++j) e.col(j) = x.data.col(idx[j]);
  return EndmemberInit{EndmemberMatrix{std::move(e)},
                       InitReport{std::move(idx), InitMethod::RandomPixels}};
}

/// Least-squares abundances, rectified: A = max(pinv(E) X, 0).
inline AbundanceMatrix init_abundances(const EndmemberMatrix& e,
                                       const HsiCube& x) {
  if (e.bands() != x.bands())
    throw ValidationError("endmember/cube band mismatch");
  Eigen::ColPivHouseholderQR<Matrix> qr(e.data);
  if (qr.rank() < e.count())
    throw NumericError("endmember matrix is rank-deficient");
  Matrix a = qr.solve(x.data);
  return AbundanceMatrix{a.cwiseMax(0.0)};
}

/// Sum-to-one constrained nonnegative least squares via the augmented row,
/// solved per pixel by projected gradient descent.
inline AbundanceMatrix fcls(const EndmemberMatrix& e, const HsiCube& x,
                            double delta, bool* converged = nullptr) {
  if (e.bands() != x.bands())
    throw ValidationError("endmember/cube band mismatch");
  if (!(delta >= 0.0)) throw ValidationError("delta must be nonnegative");
  const Index bands = e.bands(), k = e.count(), pixels = x.pixels();

  Matrix m(bands + 1, k);
  m.topRows(bands) = e.data;
  m.bottomRows(1).setConstant(delta);
  const Matrix gram = m.transpose() * m;  // K x K
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const double lipschitz = eig.eigenvalues().maxCoeff();
  if (!(lipschitz > 0.0))
    throw NumericError("endmember matrix is rank-deficient");
  {
    Eigen::ColPivHouseholderQR<Matrix> qr(e.data);
    if (qr.rank() < k)
      throw NumericError("endmember matrix is rank-deficient");
  }
  const double step = 1.0 / lipschitz;

  Matrix a(k, pixels);
  bool all_converged = true;
  const int max_iters = 10000;
  for (Index n = 0; n < pixels; ++n) {
    Vector b(bands + 1);
    b.head(bands) = x.data.col(n);
    b[bands] = delta;
    const Vector mtb = m.transpose() * b;
    auto objective = [&](const Vector& v) {
      return 0.5 * (m * v - b).squaredNorm();
    };
    // On exactly consistent systems the objective bottoms out at rounding
    // noise, below which its relative change is meaningless; treat that as
    // converged.
    const double solved_floor = 1e-22 * (1.0 + b.squaredNorm());
    // Projected gradient with Nesterov momentum; momentum is dropped
    // whenever it would increase the objective, so the sequence is monotone
    // and the relative-change stop below is meaningful.
    Vector an = Vector::Constant(k, 1.0 / k);
    Vector y = an;
    double t = 1.0;
    double obj = objective(an);
    bool ok = false;
    for (int it = 0; it < max_iters; ++it) {
      Vector next = (y - step * (gram * y - mtb)).cwiseMax(0.0);
      double obj_next = objective(next);
      if (obj_next > obj) {  // restart from the last accepted point
        t = 1.0;
        next = (an - step * (gram * an - mtb)).cwiseMax(0.0);
        obj_next = objective(next);
      }
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = next + ((t - 1.0) / t_next) * (next - an);
      const bool settled =
          obj_next <= solved_floor ||
          std::abs(obj - obj_next) <= 1e-9 * std::max(obj, 1e-30);
      an = next;
      obj = obj_next;
      t = t_next;
      if (settled) {
        ok = true;
        break;
      }
    }
    all_converged = all_converged && ok;
    a.col(n) = an;
  }
  if (converged) *converged = all_converged;
  return AbundanceMatrix{std::move(a)};
}

/// Bias-free Glorot-uniform stacks: entries U(-r, r), r = sqrt(6/(fin+fout)).
inline std::vector<Matrix> init_weights(const std::vector<Index>& widths,
                                        Index in_dim, Index out_dim,
                                        std::uint64_t seed) {
  Hyperparams::check_widths(widths, in_dim, out_dim, "widths");
  std::vector<Index> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), widths.begin(), widths.end());
  dims.push_back(out_dim);

  Rng rng(seed);
  std::vector<Matrix> layers;
  layers.reserve(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index fin = dims[l], fout = dims[l + 1];
    const double r = std::sqrt(6.0 / static_cast<double>(fin + fout));
    Matrix w(fin, fout);
    for (Index j = 0; j < fout; ++j)
      for (Index i = 0; i < fin; ++i) w(i, j) = rng.uniform(-r, r);
    layers.push_back(std::move(w));
  }
  return layers;
}

}  // namespace unmix
