#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "unmix/error.hpp"
#include "unmix/init.hpp"
#include "unmix/model.hpp"
#include "unmix/rng.hpp"
#include "unmix/types.hpp"

namespace unmix {

struct RpropConfig {
  double eta_plus = 1.2;
  double eta_minus = 0.5;
  double delta0 = 0.0125;
  double delta_min = 1e-8;
  double delta_max = 1.0;
};

/// Per-coordinate step sizes and the previous step's bookkeeping, shared
/// uniformly across all parameter blocks.
struct RpropState {
  RpropConfig cfg;
  std::vector<Matrix> step;
  std::vector<Matrix> prev_grad;
  std::vector<Matrix> prev_update;
  double prev_j = std::numeric_limits<double>::infinity();
  bool ready = false;

  void init_like(const std::vector<const Matrix*>& grads) {
    step.clear();
    prev_grad.clear();
    prev_update.clear();
    for (const Matrix* g : grads) {
      step.push_back(Matrix::Constant(g->rows(), g->cols(), cfg.delta0));
      prev_grad.push_back(Matrix::Zero(g->rows(), g->cols()));
      prev_update.push_back(Matrix::Zero(g->rows(), g->cols()));
    }
    prev_j = std::numeric_limits<double>::infinity();
    ready = true;
  }
};

/// One iRprop+ update over all blocks. Sign agreement grows the step,
/// disagreement shrinks it and undoes the previous move if the objective
/// worsened; the stored gradient is zeroed to skip one adaptation.
inline void irprop_step(std::vector<Matrix*>& params,
                        const std::vector<const Matrix*>& grads,
                        RpropState& rs, double j_curr) {
  if (params.size() != grads.size())
    throw ValidationError("parameter/gradient block count mismatch");
  if (!std::isfinite(j_curr))
    throw NumericError("objective is non-finite");
  for (const Matrix* g : grads)
    if (!g->allFinite()) throw NumericError("gradient is non-finite");
  if (!rs.ready) rs.init_like(grads);

  const RpropConfig& c = rs.cfg;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b]->rows() != grads[b]->rows() ||
        params[b]->cols() != grads[b]->cols())
      throw ValidationError("parameter/gradient shape mismatch in block " +
                            std::to_string(b));
    double* th = params[b]->data();
    const double* gd = grads[b]->data();
    double* st = rs.step[b].data();
    double* pg = rs.prev_grad[b].data();
    double* pu = rs.prev_update[b].data();
    const Index sz = params[b]->size();
    for (Index i = 0; i < sz; ++i) {
      const double g = gd[i];
      const double s = g * pg[i];
      if (s > 0.0) {
        st[i] = std::min(st[i] * c.eta_plus, c.delta_max);
        const double u = (g > 0.0 ? -st[i] : (g < 0.0 ? st[i] : 0.0));
        th[i] += u;
        pg[i] = g;
        pu[i] = u;
      } else if (s < 0.0) {
        st[i] = std::max(st[i] * c.eta_minus, c.delta_min);
        if (j_curr > rs.prev_j) th[i] -= pu[i];
        pg[i] = 0.0;
        pu[i] = 0.0;
      } else {
        const double u = (g > 0.0 ? -st[i] : (g < 0.0 ? st[i] : 0.0));
        th[i] += u;
        pg[i] = g;
        pu[i] = u;
      }
    }
  }
  rs.prev_j = j_curr;
}

inline std::vector<Matrix*> collect_params(ModelState& s) {
  std::vector<Matrix*> p;
  p.push_back(&s.e.data);
  p.push_back(&s.a.data);
  for (Matrix& w : s.we.layers) p.push_back(&w);
  for (Matrix& w : s.wa.layers) p.push_back(&w);
  return p;
}

inline std::vector<const Matrix*> collect_grads(const GradientSet& g) {
  std::vector<const Matrix*> v;
  v.push_back(&g.e);
  v.push_back(&g.a);
  for (const Matrix& w : g.we) v.push_back(&w);
  for (const Matrix& w : g.wa) v.push_back(&w);
  return v;
}

struct TrainRecord {
  Index iter = 0;
  double j = 0, j_e = 0, j_a = 0, j_m = 0, j_r = 0;
};

struct TrainHistory {
  std::vector<TrainRecord> records;
  double best_j = std::numeric_limits<double>::infinity();
  Index best_iter = -1;
  bool diverged = false;
};

struct StopRule {
  Index max_iters = 2000;
  double rel_tol = 1e-8;
  Index patience = 20;
};

struct TrainResult {
  ModelState best;
  TrainHistory history;
};

/// Full-batch loop: evaluate, record, track best, stop, step. Returns the
/// best-objective state seen, never the last one. A non-finite objective or
/// gradient stops training and flags divergence.
inline TrainResult train(const Matrix& x, ModelState init,
                         const StopRule& stop = {}) {
  init.validate();
  init.hp.validate(init.endmembers(), init.bands(), init.pixels());
  if (stop.max_iters < 0) throw ValidationError("max_iters must be >= 0");
  if (x.rows() != init.bands() || x.cols() != init.pixels())
    throw ValidationError("data shape does not match the model state");

  ModelState state = std::move(init);
  ModelState best = state;
  TrainHistory hist;
  RpropState rs;
  std::vector<Matrix*> params = collect_params(state);

  Index streak = 0;
  double prev_j = 0.0;
  for (Index iter = 0;; ++iter) {
    const ForwardCache cache = forward(state);
    const ObjectiveBreakdown ob = objective(state, x, cache);
    if (!std::isfinite(ob.j_total)) {
      hist.diverged = true;
      break;
    }
    hist.records.push_back({iter, ob.j_total, ob.j_e, ob.j_a, ob.j_m, ob.j_r});
    if (ob.j_total < hist.best_j) {
      hist.best_j = ob.j_total;
      hist.best_iter = iter;
      best = state;
    }
    if (iter == stop.max_iters) break;
    if (iter > 0) {
      const double rel =
          std::abs(ob.j_total - prev_j) / std::max(std::abs(prev_j), 1e-300);
      streak = rel < stop.rel_tol ? streak + 1 : 0;
      if (streak >= stop.patience) break;
    }
    prev_j = ob.j_total;

    const GradientSet g = gradients(state, x, cache);
    if (!g.all_finite()) {
      hist.diverged = true;
      break;
    }
    irprop_step(params, collect_grads(g), rs, ob.j_total);
  }
  return {std::move(best), std::move(hist)};
}

struct GradcheckDims {
  Index k = 2;
  Index bands = 6;
  Index pixels = 9;
  std::vector<Index> widths_e{3};
  std::vector<Index> widths_a{3};
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  double frac_excluded = 0.0;
  Index coords = 0;
  Index excluded = 0;
  bool pass = false;
};

namespace detail {

// Pre-activations of one branch, layer by layer.
inline std::vector<Matrix> preactivations(const std::vector<Matrix>& layers,
                                          const Matrix& phi0, Activation act) {
  std::vector<Matrix> z;
  Matrix phi = phi0;
  for (const Matrix& w : layers) {
    z.push_back(w.transpose() * phi);
    phi = activate(z.back(), act);
  }
  return z;
}

inline double min_abs(const Matrix& m) { return m.cwiseAbs().minCoeff(); }

}  // namespace detail

/// Central-difference check of the analytic gradients on a freshly sampled
/// random state. Coordinates whose rectifier/absolute-value arguments sit
/// within 1e-3 of the kink are excluded; the state sampler redraws until all
/// such arguments clear a wider 5e-3 band, so exclusions are normally zero.
inline GradcheckReport gradcheck(Hyperparams hp, const GradcheckDims& dims,
                                 std::uint64_t seed, double h = 1e-5) {
  hp.widths_e = dims.widths_e;
  hp.widths_a = dims.widths_a;
  hp.validate(dims.k, dims.bands, dims.pixels);
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive");

  Rng rng(seed);
  Matrix x(dims.bands, dims.pixels);
  {
    Rng rx = rng.fork(0);
    for (Index n = 0; n < x.cols(); ++n)
      for (Index p = 0; p < x.rows(); ++p) x(p, n) = rx.uniform();
  }

  ModelState state;
  state.hp = hp;
  const bool rect_act = hp.activation == Activation::Rect;
  const double band = 5e-3;
  for (int attempt = 0; attempt < 256; ++attempt) {
    Rng rs = rng.fork(1 + attempt);
    Matrix e(dims.bands, dims.k), a(dims.k, dims.pixels);
    for (Index j = 0; j < e.cols(); ++j)
      for (Index i = 0; i < e.rows(); ++i) e(i, j) = rs.uniform(-1.0, 1.0);
    for (Index j = 0; j < a.cols(); ++j)
      for (Index i = 0; i < a.rows(); ++i) a(i, j) = rs.uniform(-1.0, 1.0);
    state.e = EndmemberMatrix{std::move(e)};
    state.a = AbundanceMatrix{std::move(a)};
    state.we.layers = init_weights(dims.widths_e, dims.k, dims.pixels,
                                   derive_seed(seed, 100 + attempt));
    state.wa.layers = init_weights(dims.widths_a, dims.k, dims.bands,
                                   derive_seed(seed, 200 + attempt));

    double margin = std::min({detail::min_abs(state.a.data),
                              detail::min_abs(state.we.product()),
                              detail::min_abs(state.wa.product())});
    if (rect_act) {
      for (const Matrix& z : detail::preactivations(
               state.we.layers, state.e.data.transpose(), hp.activation))
        margin = std::min(margin, detail::min_abs(z));
      for (const Matrix& z : detail::preactivations(
               state.wa.layers, state.a.data, hp.activation))
        margin = std::min(margin, detail::min_abs(z));
    }
    if (margin > band) break;
  }

  // Kink margins for the exclusion rule, per dependence structure:
  // E[p,k] feeds column p of every branch-E pre-activation; A[k,n] feeds its
  // own rectifier and column n of branch-A; a weight in layer l feeds the
  // whole branch product and every pre-activation from layer l on.
  const std::vector<Matrix> z_e = detail::preactivations(
      state.we.layers, state.e.data.transpose(), hp.activation);
  const std::vector<Matrix> z_a =
      detail::preactivations(state.wa.layers, state.a.data, hp.activation);
  const Matrix prod_e = state.we.product();
  const Matrix prod_a = state.wa.product();
  const double me_min = detail::min_abs(prod_e);
  const double ma_min = detail::min_abs(prod_a);

  Vector ze_col_min = Vector::Constant(dims.bands, 1.0);
  Vector za_col_min = Vector::Constant(dims.pixels, 1.0);
  std::vector<double> ze_tail(z_e.size()), za_tail(z_a.size());
  if (rect_act) {
    for (const Matrix& z : z_e)
      for (Index p = 0; p < dims.bands; ++p)
        ze_col_min[p] = std::min(ze_col_min[p], z.col(p).cwiseAbs().minCoeff());
    for (const Matrix& z : z_a)
      for (Index n = 0; n < dims.pixels; ++n)
        za_col_min[n] = std::min(za_col_min[n], z.col(n).cwiseAbs().minCoeff());
    double running = 1.0;
    for (std::size_t l = z_e.size(); l-- > 0;) {
      running = std::min(running, detail::min_abs(z_e[l]));
      ze_tail[l] = running;
    }
    running = 1.0;
    for (std::size_t l = z_a.size(); l-- > 0;) {
      running = std::min(running, detail::min_abs(z_a[l]));
      za_tail[l] = running;
    }
  } else {
    std::fill(ze_tail.begin(), ze_tail.end(), 1.0);
    std::fill(za_tail.begin(), za_tail.end(), 1.0);
  }

  const double kink = 1e-3;
  auto excluded_coord = [&](std::size_t block, Index i) {
    if (block == 0) {  // E, column-major over bands x K
      if (!rect_act) return false;
      return ze_col_min[i % dims.bands] < kink;
    }
    if (block == 1) {  // A
      const Index n = i / dims.k;
      if (std::abs(state.a.data(i % dims.k, n)) < kink) return true;
      return rect_act && za_col_min[n] < kink;
    }
    const std::size_t wb = block - 2;
    if (wb < state.we.layers.size())
      return me_min < kink || ze_tail[wb] < kink;
    return ma_min < kink || za_tail[wb - state.we.layers.size()] < kink;
  };

  const GradientSet analytic = gradients(state, x);
  std::vector<Matrix*> params = collect_params(state);
  const std::vector<const Matrix*> grads = collect_grads(analytic);

  Index total = 0;
  for (const Matrix* p : params) total += p->size();
  if (total > 5000)
    throw ValidationError(
        "gradcheck is meant for tiny models (<= 5000 parameters)");

  GradcheckReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (Index i = 0; i < params[b]->size(); ++i) {
      ++report.coords;
      if (excluded_coord(b, i)) {
        ++report.excluded;
        continue;
      }
      double* th = params[b]->data() + i;
      const double saved = *th;
      *th = saved + h;
      const double j_plus = objective(state, x).j_total;
      *th = saved - h;
      const double j_minus = objective(state, x).j_total;
      *th = saved;
      const double g_fd = (j_plus - j_minus) / (2.0 * h);
      const double g = grads[b]->data()[i];
      const double rel = std::abs(g - g_fd) /
                         std::max({std::abs(g), std::abs(g_fd), 1e-8});
      report.max_rel_err = std::max(report.max_rel_err, rel);
    }
  }
  report.frac_excluded =
      static_cast<double>(report.excluded) / static_cast<double>(report.coords);
  report.pass = report.max_rel_err < 1e-4 && report.frac_excluded < 0.01;
  return report;
}

}  // namespace unmix
