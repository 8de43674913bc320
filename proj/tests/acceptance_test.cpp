// End-to-end release gate. Each test covers one numbered criterion and
// prints a single [ACCEPT] summary line so the suite output doubles as a
// checklist. Seeds, budgets, and thresholds are pinned here on purpose: a
// behavior change should flip a line, not silently shift a number.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <unmix/unmix.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace unmix;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// --- full in-process pipeline, mirroring the CLI's unmix path -------------

struct PipelineResult {
  EvalReport report;
  TrainHistory history;
  AbundanceMatrix abundances;  // reported estimate, truth order not applied
};

PipelineResult run_pipeline(const Scene& scene, double alpha, double beta,
                            Index iters, std::uint64_t seed) {
  const NormalizedCube norm = normalize(scene.cube);
  const Index k = scene.truth.endmembers.count();

  Hyperparams hp;
  hp.alpha = alpha;
  hp.beta = beta;
  hp.delta = 5.0;
  hp.activation = Activation::Rect;
  hp.iterations = iters;
  hp.widths_e = default_widths(k, scene.cube.pixels());
  hp.widths_a = default_widths(k, scene.cube.bands());

  EndmemberInit einit = vca_init(norm.cube, k, derive_seed(seed, 11));
  ModelState state;
  state.a = init_abundances(einit.endmembers, norm.cube);
  state.e = std::move(einit.endmembers);
  state.we.layers =
      init_weights(hp.widths_e, k, scene.cube.pixels(), derive_seed(seed, 12));
  state.wa.layers =
      init_weights(hp.widths_a, k, scene.cube.bands(), derive_seed(seed, 13));
  state.hp = hp;

  StopRule stop;
  stop.max_iters = iters;
  TrainResult result = train(norm.cube.data, std::move(state), stop);

  PipelineResult out;
  out.abundances = reported_abundances(result.best);
  out.report = evaluate(scene.truth.endmembers, scene.truth.abundances,
                        reported_endmembers(result.best, norm.scale),
                        out.abundances, scene.cube.data);
  out.history = std::move(result.history);
  return out;
}

// Classical reference: VCA endmembers + fully constrained least squares.
double fcls_baseline_armse(const Scene& scene, std::uint64_t seed) {
  const NormalizedCube norm = normalize(scene.cube);
  const Index k = scene.truth.endmembers.count();
  EndmemberInit einit = vca_init(norm.cube, k, derive_seed(seed, 11));
  const AbundanceMatrix a = fcls(einit.endmembers, norm.cube, 5.0);
  const EvalReport rep =
      evaluate(scene.truth.endmembers, scene.truth.abundances,
               denormalize_endmembers(einit.endmembers, norm.scale), a,
               scene.cube.data);
  return rep.armse;
}

// --- CLI plumbing for the determinism criterion ---------------------------

std::string cli_binary() {
  const char* env = std::getenv("UNMIX_CLI");
  return env ? env : "";
}

fs::path scratch_root() {
  return fs::temp_directory_path() / "unmix_acceptance";
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_binary() + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

class Acceptance : public ::testing::Test {
 protected:
  void record(int criterion, const std::string& label) {
    criterion_ = criterion;
    label_ = label;
  }

  void detail(const std::string& d) { detail_ = d; }

  void TearDown() override {
    std::string line = "[ACCEPT] criterion " + std::to_string(criterion_) +
                       " (" + label_ + "): " +
                       (HasFailure() ? "FAIL" : "PASS");
    if (!detail_.empty()) line += "  -- " + detail_;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  }

 private:
  int criterion_ = 0;
  std::string label_;
  std::string detail_;
};

// Criterion 1: analytic gradients for E, A, and every weight matrix match
// central finite differences on the tiny model (K=2, P=6, N=9, widths
// [3]/[3]), both activations, 5 seeds, relative error < 1e-4 on all
// non-excluded coordinates, under 30 s total.
TEST_F(Acceptance, Criterion1GradientOracle) {
  record(1, "gradient oracle");
  const auto t0 = std::chrono::steady_clock::now();

  GradcheckDims dims;
  Hyperparams hp;
  hp.alpha = 0.1;
  hp.beta = 0.01;
  hp.delta = 5.0;
  hp.iterations = 1;

  double worst = 0.0;
  for (Activation act : {Activation::Tanh, Activation::Rect}) {
    hp.activation = act;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const GradcheckReport rep = gradcheck(hp, dims, seed);
      EXPECT_TRUE(rep.pass) << activation_name(act) << " seed " << seed
                            << ": max rel err " << rep.max_rel_err;
      EXPECT_LT(rep.max_rel_err, 1e-4)
          << activation_name(act) << " seed " << seed;
      worst = std::max(worst, rep.max_rel_err);
    }
  }

  const double secs = seconds_since(t0);
  EXPECT_LT(secs, 30.0);
  detail(fmt("worst rel err %.2e, %.1f s", worst, secs));
}

// Criterion 2: after 2000 iterations on a noiseless 16x16, K=3, P=50 linear
// scene, reported abundance column sums land within 0.05 of 1 for >= 95% of
// pixels — the delta-augmented data row doing its sum-to-one job.
TEST_F(Acceptance, Criterion2ConstraintSatisfaction) {
  record(2, "constraint satisfaction");
  const Scene scene =
      make_scene(50, 16, 16, 3, MixingModel::LMM, kNoNoise, 1.0, 42);
  const PipelineResult run = run_pipeline(scene, 0.5, 0.01, 2000, 42);

  const Vector sums = run.abundances.data.colwise().sum().transpose();
  Index hits = 0;
  for (Index j = 0; j < sums.size(); ++j)
    if (std::abs(sums[j] - 1.0) <= 0.05) ++hits;
  const double frac = static_cast<double>(hits) / sums.size();
  EXPECT_GE(frac, 0.95);
  detail(fmt("column sums within 0.05 of 1 for %.1f%% of pixels",
             100.0 * frac));
}

// Criterion 3: end-to-end linear recovery on a 32x32, K=3, P=50, 30 dB scene
// with a VCA start, alpha=0.5, beta=0.01, at the tool-default 2000-iteration
// budget: aRMSE <= 0.10 and mean SAD <= 0.15 rad, in under 5 minutes.
//
// Known shortfall, kept as an honest gate: on scenes this small the coupled
// objective keeps falling while the endmember estimate walks away from its
// good VCA start (the data-fit term dominates and the first branch absorbs
// residual early, dragging E), so abundance error at this budget exceeds the
// target even though the spectral angles stay good. A future optimizer or
// schedule change that stops the drift should flip this line to PASS.
TEST_F(Acceptance, Criterion3LinearRecovery) {
  record(3, "end-to-end recovery, linear");
  const auto t0 = std::chrono::steady_clock::now();
  const Scene scene = make_scene(50, 32, 32, 3, MixingModel::LMM, 30.0, 1.0, 7);
  const PipelineResult run = run_pipeline(scene, 0.5, 0.01, 2000, 7);
  const double secs = seconds_since(t0);

  EXPECT_LE(run.report.armse, 0.10);
  EXPECT_LE(run.report.mean_sad_rad, 0.15);
  EXPECT_LT(secs, 300.0);
  detail(fmt("aRMSE %.4f (target <= 0.10), SAD %.4f rad (target <= 0.15), "
             "%.0f s",
             run.report.armse, run.report.mean_sad_rad, secs));
}

// Criterion 4: on 32x32 bilinear scenes at 20 dB the full model's aRMSE
// should not exceed the VCA+FCLS linear baseline's in at least 4 of 5 seeds.
//
// Known shortfall, kept as an honest gate: the linear baseline is very
// strong at this scale, and the same endmember drift that limits criterion 3
// costs more abundance accuracy than the nonlinear branches recover. Band
// count 50, tool-default 2000 iterations (budgets from 150 to 3000 measured
// no better).
TEST_F(Acceptance, Criterion4NonlinearAdvantage) {
  record(4, "nonlinear advantage over linear baseline");
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Scene scene =
        make_scene(50, 32, 32, 3, MixingModel::Bilinear, 20.0, 1.0, seed);
    const double model =
        run_pipeline(scene, 0.5, 0.01, 2000, seed).report.armse;
    const double base = fcls_baseline_armse(scene, seed);
    if (model <= base) ++wins;
    per_seed += fmt("%s%.3f/%.3f", seed == 1 ? "" : " ", model, base);
  }
  EXPECT_GE(wins, 4) << "model/baseline aRMSE per seed: " << per_seed;
  detail(fmt("wins %d/5 (model/baseline aRMSE: %s)", wins, per_seed.c_str()));
}

// Criterion 5: the multi-task coupling must earn its keep — with everything
// else identical on 32x32 linear scenes at 20 dB, aRMSE(alpha=0.5) <
// aRMSE(alpha=0) in at least 4 of 5 seeds, at the tool-default 2000
// iterations.
//
// Known shortfall, kept as an honest gate: with alpha=0 nothing ties the
// first branch's material order to the second's, so decoupled runs
// sometimes decohere badly and the coupling wins those seeds clearly — but
// on seeds where the decoupled run happens to stay coherent it edges out
// the coupled one, and measured win rates stop short of 4/5 (2/5 at 800
// iterations, 3/5 at 1500).
TEST_F(Acceptance, Criterion5MultiTaskAblation) {
  record(5, "multi-task ablation");
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Scene scene =
        make_scene(50, 32, 32, 3, MixingModel::LMM, 20.0, 1.0, seed);
    const double off = run_pipeline(scene, 0.0, 0.01, 2000, seed).report.armse;
    const double on = run_pipeline(scene, 0.5, 0.01, 2000, seed).report.armse;
    if (on < off) ++wins;
    per_seed += fmt("%s%.3f/%.3f", seed == 1 ? "" : " ", on, off);
  }
  EXPECT_GE(wins, 4) << "alpha=0.5 / alpha=0 aRMSE per seed: " << per_seed;
  detail(
      fmt("wins %d/5 (alpha=.5/alpha=0 aRMSE: %s)", wins, per_seed.c_str()));
}

// Criterion 6: generator calibration — realized SNR within 0.5 dB of target
// on a 2e4-entry image, Dirichlet columns sum to 1 within 1e-12, and the
// bilinear/polynomial hand examples reproduce exactly.
TEST_F(Acceptance, Criterion6GeneratorCalibration) {
  record(6, "generator calibration");
  const EndmemberMatrix e = gen_endmembers(20, 3, 5);
  const AbundanceMatrix a = sample_abundances(3, 1000, 1.0, 6);
  const Matrix x = mix(e, a, MixingModel::LMM);  // 20 * 1000 >= 1e4 entries
  double worst_db = 0.0;
  for (double target : {10.0, 20.0, 30.0}) {
    const Matrix noisy = add_noise(x, target, 8);
    const double realized =
        10.0 * std::log10(x.squaredNorm() / (noisy - x).squaredNorm());
    EXPECT_NEAR(realized, target, 0.5) << "target " << target << " dB";
    worst_db = std::max(worst_db, std::abs(realized - target));
  }

  double worst_sum = 0.0;
  for (double conc : {0.7, 3.0}) {
    const AbundanceMatrix d = sample_abundances(4, 500, conc, 77);
    for (Index j = 0; j < d.pixels(); ++j) {
      const double err = std::abs(d.data.col(j).sum() - 1.0);
      EXPECT_LE(err, 1e-12);
      worst_sum = std::max(worst_sum, err);
    }
  }

  // Hand-checkable interactions: columns e1=[1,1], e2=[1,0], half-and-half
  // pixel. Linear part is [1, 0.5]; the pairwise term adds
  // 0.5*0.5*(e1.*e2) = [0.25, 0].
  Matrix eb(2, 2), ab(2, 1);
  eb << 1, 1, 1, 0;
  ab << 0.5, 0.5;
  const Matrix xb = mix(EndmemberMatrix{eb}, AbundanceMatrix{ab},
                        MixingModel::Bilinear);
  EXPECT_DOUBLE_EQ(xb(0, 0), 1.25);
  EXPECT_DOUBLE_EQ(xb(1, 0), 0.5);

  // Pure pixel through the quadratic post-nonlinearity: y + y.*y.
  Matrix ep(2, 1), ap(1, 1);
  ep << 1, 0.5;
  ap << 1;
  const Matrix xp =
      mix(EndmemberMatrix{ep}, AbundanceMatrix{ap}, MixingModel::PNMM);
  EXPECT_DOUBLE_EQ(xp(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(xp(1, 0), 0.75);

  detail(fmt("worst SNR dev %.3f dB, worst column-sum dev %.1e", worst_db,
             worst_sum));
}

// Criterion 7: metric units — the two analytic spectral-angle cases and the
// constant-offset abundance case reproduce to 1e-12, and the assignment the
// aligner returns costs the same as exhaustive permutation search for K<=5
// (and for one K=9 case, which exercises the non-exhaustive path).
TEST_F(Acceptance, Criterion7MetricUnits) {
  record(7, "metric units");
  Vector u(2), v(2), w(2);
  u << 1, 0;
  v << 0, 1;
  w << 1, 1;
  EXPECT_NEAR(sad_pair(u, v), std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(sad_pair(u, w), std::numbers::pi / 4, 1e-12);

  const AbundanceMatrix at{Matrix::Constant(2, 50, 0.3)};
  const AbundanceMatrix ae{Matrix::Constant(2, 50, 0.4)};
  EXPECT_NEAR(armse(at, ae), 0.1, 1e-12);

  // Independent brute force over permutations of the mean-angle cost.
  const auto brute_cost = [](const EndmemberMatrix& t,
                             const EndmemberMatrix& est) {
    const Index k = t.count();
    Matrix cost(k, k);
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < k; ++j)
        cost(i, j) = sad_pair(t.data.col(i), est.data.col(j));
    std::vector<Index> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (Index i = 0; i < k; ++i) c += cost(i, perm[i]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  };

  for (Index k : {2, 3, 4, 5, 9}) {
    Rng rng(900 + static_cast<std::uint64_t>(k));
    const EndmemberMatrix t = gen_endmembers(30, k, 91 + k);
    Matrix shuffled(30, k);
    std::vector<Index> scramble(k);
    std::iota(scramble.begin(), scramble.end(), 0);
    for (Index i = k - 1; i > 0; --i)
      std::swap(scramble[i], scramble[rng.uniform_index(i + 1)]);
    for (Index i = 0; i < k; ++i) {
      shuffled.col(scramble[i]) = t.data.col(i);
      for (Index p = 0; p < 30; ++p)
        shuffled(p, scramble[i]) += 0.02 * rng.uniform(-1.0, 1.0);
    }
    const EndmemberMatrix est{shuffled.cwiseMax(0.0)};
    const std::vector<Index> perm = align(t, est);
    double got = 0.0;
    for (Index i = 0; i < k; ++i)
      got += sad_pair(t.data.col(i), est.data.col(perm[i]));
    EXPECT_NEAR(got, brute_cost(t, est), 1e-12) << "K=" << k;
  }
  detail("analytic angles, offset aRMSE, aligner vs brute force K in {2..5,9}");
}

// Criterion 8: optimizer unit behavior — the three per-coordinate update
// branches reproduce exactly on a scalar rig, and every training history
// reports best J equal to the minimum it recorded.
TEST_F(Acceptance, Criterion8OptimizerBehavior) {
  record(8, "optimizer unit behavior");

  struct ScalarRig {
    Matrix theta{Matrix::Constant(1, 1, 1.0)};
    Matrix grad{Matrix::Zero(1, 1)};
    RpropState rs;
    std::vector<Matrix*> params;
    std::vector<const Matrix*> grads;
    ScalarRig(double step, double prev_grad, double prev_update,
              double prev_j) {
      rs.step = {Matrix::Constant(1, 1, step)};
      rs.prev_grad = {Matrix::Constant(1, 1, prev_grad)};
      rs.prev_update = {Matrix::Constant(1, 1, prev_update)};
      rs.prev_j = prev_j;
      rs.ready = true;
      params = {&theta};
      grads = {&grad};
    }
  };

  // Same gradient sign as last step: grow the step by 1.2 and move downhill.
  ScalarRig grow(0.1, 1.0, -0.1, 5.0);
  grow.grad(0, 0) = 2.0;
  irprop_step(grow.params, grow.grads, grow.rs, 4.0);
  EXPECT_DOUBLE_EQ(grow.rs.step[0](0, 0), 0.12);
  EXPECT_DOUBLE_EQ(grow.theta(0, 0), 0.88);
  EXPECT_DOUBLE_EQ(grow.rs.prev_grad[0](0, 0), 2.0);

  // Sign flip while the objective got worse: undo the previous move, halve
  // the step, blank the stored gradient.
  ScalarRig flip(0.12, 2.0, -0.12, 1.0);
  flip.theta(0, 0) = 0.88;
  flip.grad(0, 0) = -1.0;
  irprop_step(flip.params, flip.grads, flip.rs, 2.0);
  EXPECT_DOUBLE_EQ(flip.rs.step[0](0, 0), 0.06);
  EXPECT_DOUBLE_EQ(flip.theta(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(flip.rs.prev_grad[0](0, 0), 0.0);
  EXPECT_DOUBLE_EQ(flip.rs.prev_update[0](0, 0), 0.0);

  // Stored gradient is zero (the step right after a reverted flip): apply
  // the sign of the fresh gradient at the current step size, no adaptation.
  ScalarRig hold(0.06, 0.0, 0.0, 2.0);
  hold.grad(0, 0) = -1.0;
  irprop_step(hold.params, hold.grads, hold.rs, 1.5);
  EXPECT_DOUBLE_EQ(hold.rs.step[0](0, 0), 0.06);
  EXPECT_DOUBLE_EQ(hold.theta(0, 0), 1.06);
  EXPECT_DOUBLE_EQ(hold.rs.prev_grad[0](0, 0), -1.0);

  // best_j must equal the running minimum of every history it reports.
  for (std::uint64_t seed : {3, 14}) {
    const Scene scene =
        make_scene(12, 8, 8, 2, MixingModel::LMM, 25.0, 1.0, seed);
    const PipelineResult run = run_pipeline(scene, 0.5, 0.01, 300, seed);
    ASSERT_FALSE(run.history.records.empty());
    double running = std::numeric_limits<double>::infinity();
    for (const TrainRecord& r : run.history.records)
      running = std::min(running, r.j);
    EXPECT_DOUBLE_EQ(run.history.best_j, running) << "seed " << seed;
    EXPECT_LE(run.history.best_iter,
              run.history.records.back().iter);
  }
  detail("three update branches exact; best J = min over recorded history");
}

// Criterion 9: the synth -> unmix -> eval pipeline is bit-identical across
// two runs with identical flags and seed. Every artifact is compared
// byte-for-byte except results.json, whose wall-clock timing field is the
// one legitimately nondeterministic value; it is compared field-for-field
// with the timing erased.
TEST_F(Acceptance, Criterion9Determinism) {
  record(9, "pipeline determinism");
  ASSERT_FALSE(cli_binary().empty()) << "UNMIX_CLI not set";

  const fs::path root = scratch_root();
  fs::remove_all(root);
  fs::create_directories(root);

  const auto once = [&](const std::string& tag) {
    const fs::path dir = root / tag;
    fs::create_directories(dir);
    EXPECT_EQ(run_cli("synth --bands 30 --size 8x8 --endmembers 2"
                      " --model bilinear --snr 30 --seed 5 --out " +
                      dir.string()),
              0);
    EXPECT_EQ(run_cli("unmix --input " + (dir / "scene").string() +
                      " --endmembers 2 --iters 300 --seed 9 --out " +
                      dir.string()),
              0);
    EXPECT_EQ(run_cli("eval --est " + dir.string() + " --truth " +
                      dir.string() + " --out " + (dir / "eval.json").string()),
              0);
    return dir;
  };

  const fs::path a = once("run_a");
  const fs::path b = once("run_b");
  if (HasFailure()) return;

  const char* files[] = {"scene.json",          "scene.raw",
                         "endmembers_true.csv", "abundances_true.raw",
                         "provenance.json",     "endmembers_est.csv",
                         "abundances_est.json", "abundances_est.raw",
                         "abundance_0.pgm",     "abundance_1.pgm",
                         "eval.json"};
  for (const char* f : files) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f << " differs between runs";
  }

  json ra = json::parse(slurp(a / "results.json"));
  json rb = json::parse(slurp(b / "results.json"));
  ra.erase("timing_seconds");
  rb.erase("timing_seconds");
  EXPECT_EQ(ra, rb) << "results.json differs beyond timing";
  detail("11 artifacts byte-identical; results.json identical minus timing");
}
