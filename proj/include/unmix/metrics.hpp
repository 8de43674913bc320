#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "unmix/error.hpp"
#include "unmix/types.hpp"

namespace unmix {

/// Spectral angle in radians; the normalized inner product is clamped to
/// [-1, 1] before arccos to absorb rounding.
inline double sad_pair(const Vector& e, const Vector& e_hat) {
  if (e.size() != e_hat.size())
    throw ValidationError("spectra must have equal length");
  const double ne = e.norm(), nh = e_hat.norm();
  if (!(ne > 0.0) || !(nh > 0.0))
    throw ValidationError("spectral angle of a zero vector is undefined");
  const double c = std::clamp(e.dot(e_hat) / (ne * nh), -1.0, 1.0);
  return std::acos(c);
}

namespace detail {

/// Minimizing assignment by brute force; ties go to the lexicographically
/// smallest permutation, i.e. lowest-index pairing.
inline std::vector<Index> align_exhaustive(const Matrix& cost) {
  const Index k = cost.rows();
  std::vector<Index> perm(k), best(k);
  std::iota(perm.begin(), perm.end(), 0);
  best = perm;
  double best_total = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Index i = 0; i < k; ++i) total += cost(i, perm[i]);
    if (total < best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// O(K^3) assignment via potentials and shortest augmenting paths.
inline std::vector<Index> align_hungarian(const Matrix& cost) {
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      Index j1 = 0;
      double delta = inf;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> perm(n);
  for (Index j = 1; j <= n; ++j)
    if (match[j] != 0) perm[match[j] - 1] = j - 1;
  return perm;
}

}  // namespace detail

/// perm[i] = index of the estimated column matched to true column i,
/// minimizing total spectral angle.
inline std::vector<Index> align(const EndmemberMatrix& e_true,
                                const EndmemberMatrix& e_est) {
  if (e_true.count() != e_est.count())
    throw ValidationError("endmember count mismatch: " +
                          std::to_string(e_true.count()) + " vs " +
                          std::to_string(e_est.count()));
  const Index k = e_true.count();
  Matrix cost(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      cost(i, j) = sad_pair(e_true.data.col(i), e_est.data.col(j));
  return k <= 8 ? detail::align_exhaustive(cost)
                : detail::align_hungarian(cost);
}

struct EvalReport {
  std::vector<double> per_endmember_sad_rad;  // indexed by true endmember
  double mean_sad_rad = 0.0;
  double mean_sad_deg = 0.0;
  double armse = std::numeric_limits<double>::quiet_NaN();
  double recon_rmse = std::numeric_limits<double>::quiet_NaN();
  std::vector<Index> permutation;
};

/// Aligns, then averages the per-pair spectral angles.
inline EvalReport mean_sad(const EndmemberMatrix& e_true,
                           const EndmemberMatrix& e_est) {
  EvalReport r;
  r.permutation = align(e_true, e_est);
  const Index k = e_true.count();
  r.per_endmember_sad_rad.resize(k);
  double sum = 0.0;
  for (Index i = 0; i < k; ++i) {
    r.per_endmember_sad_rad[i] =
        sad_pair(e_true.data.col(i), e_est.data.col(r.permutation[i]));
    sum += r.per_endmember_sad_rad[i];
  }
  r.mean_sad_rad = sum / k;
  r.mean_sad_deg = r.mean_sad_rad * 180.0 / std::numbers::pi;
  return r;
}

/// Root mean squared abundance error over all K*N entries. The estimate must
/// already be row-permuted by the endmember alignment.
inline double armse(const AbundanceMatrix& a_true,
                    const AbundanceMatrix& a_est) {
  if (a_true.count() != a_est.count() || a_true.pixels() != a_est.pixels())
    throw ValidationError("abundance shape mismatch");
  const double n_entries =
      static_cast<double>(a_true.count()) * a_true.pixels();
  return std::sqrt((a_true.data - a_est.data).squaredNorm() / n_entries);
}

inline double recon_rmse(const Matrix& x, const EndmemberMatrix& e,
                         const AbundanceMatrix& a) {
  if (e.bands() != x.rows() || a.pixels() != x.cols() ||
      e.count() != a.count())
    throw ValidationError("reconstruction shape mismatch");
  const double n_entries = static_cast<double>(x.rows()) * x.cols();
  return std::sqrt((x - e.data * a.data).squaredNorm() / n_entries);
}

/// Full comparison of an estimate against ground truth: endmember alignment,
/// spectral angles, abundance error on aligned rows, reconstruction residual.
inline EvalReport evaluate(const EndmemberMatrix& e_true,
                           const AbundanceMatrix& a_true,
                           const EndmemberMatrix& e_est,
                           const AbundanceMatrix& a_est, const Matrix& x) {
  if (a_est.count() != e_est.count())
    throw ValidationError("estimated endmember/abundance K mismatch");
  EvalReport r = mean_sad(e_true, e_est);
  Matrix aligned(a_est.count(), a_est.pixels());
  for (Index i = 0; i < a_est.count(); ++i)
    aligned.row(i) = a_est.data.row(r.permutation[i]);
  r.armse = armse(a_true, AbundanceMatrix{aligned});
  r.recon_rmse = recon_rmse(x, e_est, a_est);
  return r;
}

}  // namespace unmix
