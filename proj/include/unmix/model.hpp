#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unmix/error.hpp"
#include "unmix/types.hpp"

namespace unmix {

/// Bias-free layer stack; layers[i] maps width dims[i] to dims[i+1].
struct BranchWeights {
  std::vector<Matrix> layers;

  void validate_chain(Index in_dim, Index out_dim,
                      const std::string& label) const {
    if (layers.empty())
      throw ValidationError(label + ": at least one layer is required");
    Index prev = in_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].rows() != prev)
        throw ValidationError(label + ": layer " + std::to_string(i) +
                              " expects " + std::to_string(prev) +
                              " input rows, has " +
                              std::to_string(layers[i].rows()));
      prev = layers[i].cols();
    }
    if (prev != out_dim)
      throw ValidationError(label + ": chain ends at width " +
                            std::to_string(prev) + ", expected " +
                            std::to_string(out_dim));
  }

  /// M = layers[0] * layers[1] * ... * layers[L-1].
  Matrix product() const {
    Matrix m = layers.front();
    for (std::size_t i = 1; i < layers.size(); ++i) m = m * layers[i];
    return m;
  }
};

struct ModelState {
  EndmemberMatrix e;   // P x K
  AbundanceMatrix a;   // K x N
  BranchWeights we;    // K -> ... -> N
  BranchWeights wa;    // K -> ... -> P
  Hyperparams hp;

  Index bands() const { return e.bands(); }
  Index pixels() const { return a.pixels(); }
  Index endmembers() const { return e.count(); }

  void validate() const {
    const Index k = e.count();
    if (a.count() != k)
      throw ValidationError("E has " + std::to_string(k) + " columns but A has " +
                            std::to_string(a.count()) + " rows");
    we.validate_chain(k, pixels(), "branch-E weights");
    wa.validate_chain(k, bands(), "branch-A weights");
  }
};

struct ForwardCache {
  std::vector<Matrix> phi_e;  // phi_e[0] = E^T (K x P) ... phi_e[L] (N x P)
  std::vector<Matrix> phi_a;  // phi_a[0] = A  (K x N) ... phi_a[L] (P x N)
  Matrix prod_e;              // K x N
  Matrix prod_a;              // K x P
  Matrix xhat_e;              // N x (P+1)
  Matrix xhat_a;              // (P+1) x N
};

struct ObjectiveBreakdown {
  double j_total = 0.0;
  double j_e = 0.0;
  double j_a = 0.0;
  double j_m = 0.0;
  double j_r = 0.0;
};

struct GradientSet {
  Matrix e;                // P x K
  Matrix a;                // K x N
  std::vector<Matrix> we;
  std::vector<Matrix> wa;

  bool all_finite() const {
    if (!e.allFinite() || !a.allFinite()) return false;
    for (const Matrix& w : we)
      if (!w.allFinite()) return false;
    for (const Matrix& w : wa)
      if (!w.allFinite()) return false;
    return true;
  }
};

/// Appends the ASC row delta*1 under both the data and the endmembers.
inline std::pair<Matrix, Matrix> augment(const Matrix& x, const Matrix& e,
                                         double delta) {
  if (!(delta >= 0.0)) throw ValidationError("delta must be nonnegative");
  Matrix xt(x.rows() + 1, x.cols());
  xt.topRows(x.rows()) = x;
  xt.bottomRows(1).setConstant(delta);
  Matrix et(e.rows() + 1, e.cols());
  et.topRows(e.rows()) = e;
  et.bottomRows(1).setConstant(delta);
  return {std::move(xt), std::move(et)};
}

/// Endmember branch: nonlinear chain from E^T plus the rectified product
/// path against the augmented endmembers.
inline void forward_e(const ModelState& s, double delta, ForwardCache& c) {
  const Index bands = s.bands();
  const Activation act = s.hp.activation;
  c.phi_e.clear();
  c.phi_e.reserve(s.we.layers.size() + 1);
  c.phi_e.push_back(s.e.data.transpose());
  for (const Matrix& w : s.we.layers)
    c.phi_e.push_back(activate(w.transpose() * c.phi_e.back(), act));
  c.prod_e = s.we.product();  // K x N

  Matrix et(bands + 1, s.endmembers());
  et.topRows(bands) = s.e.data;
  et.bottomRows(1).setConstant(delta);

  c.xhat_e.resize(s.pixels(), bands + 1);
  c.xhat_e.noalias() = c.prod_e.cwiseMax(0.0).transpose() * et.transpose();
  c.xhat_e.leftCols(bands) += c.phi_e.back();  // zero column appended
}

/// Abundance branch: nonlinear chain from A plus |product|^T with the
/// delta row applied to rectified A.
inline void forward_a(const ModelState& s, double delta, ForwardCache& c) {
  const Index bands = s.bands();
  const Activation act = s.hp.activation;
  c.phi_a.clear();
  c.phi_a.reserve(s.wa.layers.size() + 1);
  c.phi_a.push_back(s.a.data);
  for (const Matrix& w : s.wa.layers)
    c.phi_a.push_back(activate(w.transpose() * c.phi_a.back(), act));
  c.prod_a = s.wa.product();  // K x P

  Matrix b(bands + 1, s.endmembers());
  b.topRows(bands) = c.prod_a.transpose().cwiseAbs();
  b.bottomRows(1).setConstant(delta);

  c.xhat_a.resize(bands + 1, s.pixels());
  c.xhat_a.noalias() = b * s.a.data.cwiseMax(0.0);
  c.xhat_a.topRows(bands) += c.phi_a.back();  // zero row appended
}

inline ForwardCache forward(const ModelState& s) {
  ForwardCache c;
  forward_e(s, s.hp.delta, c);
  forward_a(s, s.hp.delta, c);
  return c;
}

/// Objective components. Non-finite values propagate to the caller as a
/// divergence signal rather than throwing, so the training loop can react.
inline ObjectiveBreakdown objective(const ModelState& s, const Matrix& x,
                                    const ForwardCache& c) {
  const Index bands = s.bands();
  const Index pixels = s.pixels();
  const auto [xt, et] = augment(x, s.e.data, s.hp.delta);

  ObjectiveBreakdown ob;
  ob.j_e = (xt.transpose() - c.xhat_e).squaredNorm() / (2.0 * (bands + 1));
  ob.j_a = (xt - c.xhat_a).squaredNorm() / (2.0 * pixels);
  ob.j_m = (xt - et * s.a.data.cwiseMax(0.0)).squaredNorm() / (2.0 * pixels);
  ob.j_r = s.e.data.squaredNorm() / (2.0 * bands) +
           s.a.data.squaredNorm() / (2.0 * pixels);
  for (const Matrix& w : s.we.layers) ob.j_r += 0.5 * w.squaredNorm();
  for (const Matrix& w : s.wa.layers) ob.j_r += 0.5 * w.squaredNorm();
  ob.j_total = ob.j_e + ob.j_a + s.hp.alpha * ob.j_m + s.hp.beta * ob.j_r;
  return ob;
}

inline ObjectiveBreakdown objective(const ModelState& s, const Matrix& x) {
  const ForwardCache c = forward(s);
  return objective(s, x, c);
}

namespace detail {

// Gradient of <g, layers[0]*...*layers[L-1]> with respect to each factor,
// via prefix/suffix products; adds the results into `out`.
inline void product_path_grads(const std::vector<Matrix>& layers,
                               const Matrix& g, std::vector<Matrix>& out) {
  const std::size_t n = layers.size();
  std::vector<Matrix> suffix(n);
  suffix[n - 1] = Matrix::Identity(layers[n - 1].cols(), layers[n - 1].cols());
  for (std::size_t i = n - 1; i-- > 0;) suffix[i] = layers[i + 1] * suffix[i + 1];
  Matrix prefix = Matrix::Identity(layers[0].rows(), layers[0].rows());
  for (std::size_t i = 0; i < n; ++i) {
    out[i].noalias() += prefix.transpose() * g * suffix[i].transpose();
    if (i + 1 < n) prefix = prefix * layers[i];
  }
}

// Entrywise sign with sign(0) = 0; the |.| subgradient convention.
inline Matrix sign0(const Matrix& m) {
  return ((m.array() > 0.0).cast<double>() - (m.array() < 0.0).cast<double>())
      .matrix();
}

}  // namespace detail

/// Hand-derived reverse-mode gradients of the full objective.
inline GradientSet gradients(const ModelState& s, const Matrix& x,
                             const ForwardCache& c) {
  const Index bands = s.bands();
  const Index pixels = s.pixels();
  const double alpha = s.hp.alpha, beta = s.hp.beta;
  const Activation act = s.hp.activation;
  const auto [xt, et] = augment(x, s.e.data, s.hp.delta);

  GradientSet g;
  g.e = Matrix::Zero(bands, s.endmembers());
  g.a = Matrix::Zero(s.endmembers(), pixels);
  g.we.resize(s.we.layers.size());
  g.wa.resize(s.wa.layers.size());
  for (std::size_t i = 0; i < s.we.layers.size(); ++i)
    g.we[i] = Matrix::Zero(s.we.layers[i].rows(), s.we.layers[i].cols());
  for (std::size_t i = 0; i < s.wa.layers.size(); ++i)
    g.wa[i] = Matrix::Zero(s.wa.layers[i].rows(), s.wa.layers[i].cols());

  const Matrix rect_a = s.a.data.cwiseMax(0.0);
  const Matrix mask_a = (s.a.data.array() > 0.0).cast<double>().matrix();

  // ----- endmember branch -----
  const Matrix ge = (c.xhat_e - xt.transpose()) / (bands + 1);  // N x (P+1)

  // nonlinear chain down to phi_e[0] = E^T
  {
    Matrix dphi = ge.leftCols(bands);  // N x P
    for (std::size_t l = s.we.layers.size(); l-- > 0;) {
      const Matrix d =
          dphi.cwiseProduct(activation_deriv(c.phi_e[l + 1], act));
      g.we[l].noalias() += c.phi_e[l] * d.transpose();
      dphi = s.we.layers[l] * d;
    }
    g.e += dphi.transpose();  // (K x P)^T
  }

  // linear path: L_e = rect(M_e)^T Et^T
  {
    const Matrix d_et = ge.transpose() * c.prod_e.cwiseMax(0.0).transpose();
    g.e += d_et.topRows(bands);
  }
  {
    const Matrix mask_me = (c.prod_e.array() > 0.0).cast<double>().matrix();
    const Matrix g_me =
        (et.transpose() * ge.transpose()).cwiseProduct(mask_me);  // K x N
    detail::product_path_grads(s.we.layers, g_me, g.we);
  }

  // ----- abundance branch -----
  const Matrix ga = (c.xhat_a - xt) / pixels;  // (P+1) x N

  // nonlinear chain down to phi_a[0] = A
  {
    Matrix dphi = ga.topRows(bands);  // P x N
    for (std::size_t l = s.wa.layers.size(); l-- > 0;) {
      const Matrix d =
          dphi.cwiseProduct(activation_deriv(c.phi_a[l + 1], act));
      g.wa[l].noalias() += c.phi_a[l] * d.transpose();
      dphi = s.wa.layers[l] * d;
    }
    g.a += dphi;
  }

  // linear path: B rect(A) with B = [|M_a^T|; delta 1^T]
  {
    Matrix b(bands + 1, s.endmembers());
    b.topRows(bands) = c.prod_a.transpose().cwiseAbs();
    b.bottomRows(1).setConstant(s.hp.delta);
    g.a += (b.transpose() * ga).cwiseProduct(mask_a);

    const Matrix grad_b = ga * rect_a.transpose();  // (P+1) x K
    const Matrix g_ma = (grad_b.topRows(bands)
                             .cwiseProduct(detail::sign0(c.prod_a.transpose())))
                            .transpose();  // K x P
    detail::product_path_grads(s.wa.layers, g_ma, g.wa);
  }

  // ----- auxiliary factorization term -----
  if (alpha != 0.0) {
    const Matrix rm = et * rect_a - xt;  // (P+1) x N
    const Matrix d_et = rm * rect_a.transpose();
    g.e += (alpha / pixels) * d_et.topRows(bands);
    g.a += (alpha / pixels) * (et.transpose() * rm).cwiseProduct(mask_a);
  }

  // ----- decay -----
  if (beta != 0.0) {
    g.e += (beta / bands) * s.e.data;
    g.a += (beta / pixels) * s.a.data;
    for (std::size_t i = 0; i < s.we.layers.size(); ++i)
      g.we[i] += beta * s.we.layers[i];
    for (std::size_t i = 0; i < s.wa.layers.size(); ++i)
      g.wa[i] += beta * s.wa.layers[i];
  }

  return g;
}

inline GradientSet gradients(const ModelState& s, const Matrix& x) {
  const ForwardCache c = forward(s);
  return gradients(s, x, c);
}

inline EndmemberMatrix reported_endmembers(const ModelState& s, double scale) {
  return denormalize_endmembers(s.e, scale);
}

/// Primary abundance estimate is rect(A); the first branch's rect(M_e) is
/// available as a diagnostic alternative.
inline AbundanceMatrix reported_abundances(const ModelState& s,
                                           bool from_branch_e = false) {
  if (from_branch_e)
    return AbundanceMatrix{s.we.product().cwiseMax(0.0)};
  return AbundanceMatrix{s.a.data.cwiseMax(0.0)};
}

/// Two geometrically spaced hidden widths between K and the output size,
/// clamped to the strict ordering; falls back to one layer when only one
/// integer fits, and rejects chains that cannot exist.
inline std::vector<Index> default_widths(Index k, Index out_dim) {
  if (out_dim <= k + 1)
    throw ValidationError(
        "no hidden width fits strictly between " + std::to_string(k) +
        " and " + std::to_string(out_dim) + "; pass explicit widths");
  if (out_dim == k + 2) return {k + 1};
  const double ratio = static_cast<double>(out_dim) / k;
  Index h1 = static_cast<Index>(std::llround(k * std::pow(ratio, 1.0 / 3.0)));
  Index h2 = static_cast<Index>(std::llround(k * std::pow(ratio, 2.0 / 3.0)));
  h1 = std::clamp<Index>(h1, k + 1, out_dim - 2);
  h2 = std::clamp<Index>(h2, h1 + 1, out_dim - 1);
  return {h1, h2};
}

}  // namespace unmix
