// Command-line surface: synth | unmix | eval | render | gradcheck.
// Exit codes: 0 success, 2 argument/validation error, 3 I/O error,
// 4 numeric failure (divergence, failed gradient check).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <unmix/unmix.hpp>

namespace fs = std::filesystem;
using namespace unmix;

namespace {

std::pair<Index, Index> parse_size(const std::string& text) {
  const auto sep = text.find('x');
  if (sep == std::string::npos || text.find('x', sep + 1) != std::string::npos)
    throw ValidationError("--size must look like WxH, got \"" + text + "\"");
  const std::string ws = text.substr(0, sep), hs = text.substr(sep + 1);
  char* end = nullptr;
  const long w = std::strtol(ws.c_str(), &end, 10);
  if (end != ws.c_str() + ws.size() || w < 1)
    throw ValidationError("bad width in --size \"" + text + "\"");
  const long h = std::strtol(hs.c_str(), &end, 10);
  if (end != hs.c_str() + hs.size() || h < 1)
    throw ValidationError("bad height in --size \"" + text + "\"");
  return {static_cast<Index>(w), static_cast<Index>(h)};
}

double parse_snr(const std::string& text) {
  if (text == "none") return kNoNoise;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || !std::isfinite(v))
    throw ValidationError("--snr must be a decibel value or \"none\"");
  return v;
}

std::vector<Index> parse_widths(const std::string& text) {
  std::vector<Index> widths;
  if (text.empty()) return widths;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string token = text.substr(pos, comma - pos);
    char* end = nullptr;
    const long v = std::strtol(token.c_str(), &end, 10);
    if (token.empty() || end != token.c_str() + token.size())
      throw ValidationError("bad width list entry \"" + token + "\"");
    widths.push_back(static_cast<Index>(v));
    pos = comma + 1;
  }
  return widths;
}

void apply_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("UNMIX_THREADS"))
      threads = std::atoi(env);
  }
  if (threads > 0) Eigen::setNbThreads(threads);
}

struct SynthArgs {
  Index bands = 0;
  std::string size;
  Index endmembers = 0;
  std::string model = "lmm";
  std::string snr = "none";
  double concentration = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string library;
};

void run_synth(const SynthArgs& args) {
  const auto [width, height] = parse_size(args.size);
  const double snr_db = parse_snr(args.snr);
  const MixingModel model = mixing_model_from_name(args.model);

  Scene scene;
  std::vector<double> wavelengths;
  if (args.library.empty()) {
    scene = make_scene(args.bands, width, height, args.endmembers, model,
                       snr_db, args.concentration, args.seed);
  } else {
    const SpectralLibrary lib = read_spectral_library(args.library);
    if (lib.endmembers.count() < args.endmembers)
      throw ValidationError("library has " +
                            std::to_string(lib.endmembers.count()) +
                            " spectra, need " +
                            std::to_string(args.endmembers));
    if (lib.endmembers.bands() != args.bands)
      throw ValidationError("--bands " + std::to_string(args.bands) +
                            " does not match the library's " +
                            std::to_string(lib.endmembers.bands()));
    EndmemberMatrix e{lib.endmembers.data.leftCols(args.endmembers)};
    AbundanceMatrix a =
        sample_abundances(args.endmembers, width * height, args.concentration,
                          derive_seed(args.seed, 2));
    Matrix x = add_noise(mix(e, a, model), snr_db, derive_seed(args.seed, 3));
    scene.cube = validate_cube(std::move(x), width, height);
    scene.truth =
        SceneTruth{std::move(e), std::move(a), model, snr_db, args.seed};
    wavelengths = lib.wavelengths;
  }

  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw IoError("cannot create output directory " + args.out);
  const fs::path out(args.out);
  write_cube(scene.cube, (out / "scene").string());
  write_spectral_library((out / "endmembers_true.csv").string(), wavelengths,
                         scene.truth.endmembers);
  write_raw_matrix((out / "abundances_true.raw").string(),
                   scene.truth.abundances.data);
  Provenance prov;
  prov.seed = args.seed;
  prov.model = mixing_model_name(model);
  prov.snr_db = snr_db;
  prov.concentration = args.concentration;
  prov.endmembers = args.endmembers;
  prov.bands = args.bands;
  prov.width = width;
  prov.height = height;
  write_provenance((out / "provenance.json").string(), prov);
  std::cout << "synth: wrote scene " << args.bands << "x" << width << "x"
            << height << " (K=" << args.endmembers << ", "
            << mixing_model_name(model) << ") to " << args.out << "\n";
}

struct UnmixArgs {
  std::string input;
  Index endmembers = 0;
  double alpha = 0.5;
  double beta = 0.01;
  double delta = 5.0;
  std::string activation = "relu";
  std::string widths_e;
  std::string widths_a;
  Index iters = 2000;
  std::string init = "vca";
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
};

int run_unmix(const UnmixArgs& args) {
  apply_threads(args.threads);
  if (args.init != "vca" && args.init != "random" && args.init != "fcls")
    throw ValidationError("--init must be vca, random, or fcls");

  const HsiCube cube = read_cube(args.input);
  const NormalizedCube norm = normalize(cube);
  const Index bands = cube.bands(), pixels = cube.pixels();
  const Index k = args.endmembers;

  Hyperparams hp;
  hp.alpha = args.alpha;
  hp.beta = args.beta;
  hp.delta = args.delta;
  hp.activation = activation_from_name(args.activation);
  hp.iterations = args.iters;
  hp.widths_e = args.widths_e.empty() ? default_widths(k, pixels)
                                      : parse_widths(args.widths_e);
  hp.widths_a = args.widths_a.empty() ? default_widths(k, bands)
                                      : parse_widths(args.widths_a);
  hp.validate(k, bands, pixels);

  EndmemberInit einit =
      args.init == "random"
          ? random_pixel_init(norm.cube, k, derive_seed(args.seed, 11))
          : vca_init(norm.cube, k, derive_seed(args.seed, 11));
  AbundanceMatrix a0 = args.init == "fcls"
                           ? fcls(einit.endmembers, norm.cube, hp.delta)
                           : init_abundances(einit.endmembers, norm.cube);

  ModelState state;
  state.e = std::move(einit.endmembers);
  state.a = std::move(a0);
  state.we.layers =
      init_weights(hp.widths_e, k, pixels, derive_seed(args.seed, 12));
  state.wa.layers =
      init_weights(hp.widths_a, k, bands, derive_seed(args.seed, 13));
  state.hp = hp;

  const auto t0 = std::chrono::steady_clock::now();
  StopRule stop;
  stop.max_iters = args.iters;
  TrainResult result = train(norm.cube.data, std::move(state), stop);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const EndmemberMatrix e_hat =
      reported_endmembers(result.best, norm.scale);
  const AbundanceMatrix a_hat = reported_abundances(result.best);
  const double recon = recon_rmse(cube.data, e_hat, a_hat);

  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw IoError("cannot create output directory " + args.out);
  const fs::path out(args.out);

  RunConfig config;
  config.hp = hp;
  config.seed = args.seed;
  config.endmembers = k;
  config.width = cube.width;
  config.height = cube.height;
  config.bands = bands;
  config.init = args.init;
  write_results((out / "results.json").string(), config, nullptr, recon,
                result.history, e_hat, elapsed);
  write_spectral_library((out / "endmembers_est.csv").string(),
                         cube.wavelengths, e_hat);
  HsiCube a_cube;
  a_cube.data = a_hat.data;
  a_cube.width = cube.width;
  a_cube.height = cube.height;
  write_cube(a_cube, (out / "abundances_est").string());
  write_abundance_maps(a_hat, cube.width, cube.height, out.string());

  std::cout << "unmix: best J=" << result.history.best_j << " at iteration "
            << result.history.best_iter << ", recon RMSE=" << recon << ", "
            << elapsed << " s\n";
  if (result.history.diverged) {
    std::cerr << "unmix: training diverged; wrote the best state seen\n";
    return 4;
  }
  return 0;
}

struct EvalArgs {
  std::string est;
  std::string truth;
  std::string out;
};

void run_eval(const EvalArgs& args) {
  const fs::path truth(args.truth), est(args.est);
  const Provenance prov = read_provenance((truth / "provenance.json").string());
  const SpectralLibrary e_true =
      read_spectral_library((truth / "endmembers_true.csv").string());
  const Matrix a_true =
      read_raw_matrix((truth / "abundances_true.raw").string(),
                      prov.endmembers, prov.width * prov.height);
  const HsiCube scene = read_cube((truth / "scene").string());
  const SpectralLibrary e_est =
      read_spectral_library((est / "endmembers_est.csv").string());
  const HsiCube a_est = read_cube((est / "abundances_est").string());

  const EvalReport report =
      evaluate(e_true.endmembers, AbundanceMatrix{a_true}, e_est.endmembers,
               AbundanceMatrix{a_est.data}, scene.data);
  write_eval_report(args.out, report);
  std::printf(
      "eval: mean SAD %.6f rad (%.4f deg), aRMSE %.6f, recon RMSE %.6f\n",
      report.mean_sad_rad, report.mean_sad_deg, report.armse,
      report.recon_rmse);
}

struct RenderArgs {
  std::string abundances;
  std::string size;
  std::string out;
};

void run_render(const RenderArgs& args) {
  const auto [width, height] = parse_size(args.size);
  const HsiCube a = read_cube(args.abundances);
  if (a.pixels() != width * height)
    throw ValidationError("abundance pixel count " +
                          std::to_string(a.pixels()) +
                          " does not match --size " + args.size);
  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw IoError("cannot create output directory " + args.out);
  write_abundance_maps(AbundanceMatrix{a.data}, width, height, args.out);
  std::cout << "render: wrote " << a.bands() << " abundance maps to "
            << args.out << "\n";
}

struct GradcheckArgs {
  std::uint64_t seed = 11;
  std::string activation = "tanh";
  double fd_step = 1e-5;
};

int run_gradcheck(const GradcheckArgs& args) {
  Hyperparams hp;
  hp.alpha = 0.1;
  hp.beta = 0.01;
  hp.delta = 5.0;
  hp.activation = activation_from_name(args.activation);
  const GradcheckReport report = gradcheck(hp, {}, args.seed, args.fd_step);
  std::printf(
      "gradcheck(%s, seed %llu): max rel err %.3g, excluded %lld/%lld -> %s\n",
      args.activation.c_str(), static_cast<unsigned long long>(args.seed),
      report.max_rel_err, static_cast<long long>(report.excluded),
      static_cast<long long>(report.coords), report.pass ? "PASS" : "FAIL");
  return report.pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blind nonlinear hyperspectral unmixing toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  synth->add_option("--bands", synth_args.bands, "band count P")->required();
  synth->add_option("--size", synth_args.size, "spatial size WxH")->required();
  synth->add_option("--endmembers", synth_args.endmembers, "endmember count K")
      ->required();
  synth->add_option("--model", synth_args.model, "lmm|bilinear|pnmm");
  synth->add_option("--snr", synth_args.snr, "SNR in dB, or \"none\"");
  synth->add_option("--concentration", synth_args.concentration,
                    "Dirichlet concentration");
  synth->add_option("--seed", synth_args.seed, "random seed");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--library", synth_args.library,
                    "spectral library CSV instead of synthetic spectra");

  UnmixArgs unmix_args;
  CLI::App* unmix_cmd = app.add_subcommand("unmix", "run the two-branch model");
  unmix_cmd->add_option("--input", unmix_args.input, "cube path stem")
      ->required();
  unmix_cmd->add_option("--endmembers", unmix_args.endmembers, "K")->required();
  unmix_cmd->add_option("--alpha", unmix_args.alpha, "auxiliary-task weight");
  unmix_cmd->add_option("--beta", unmix_args.beta, "decay weight");
  unmix_cmd->add_option("--delta", unmix_args.delta, "sum-to-one strength");
  unmix_cmd->add_option("--activation", unmix_args.activation,
                        "relu|tanh|sigmoid");
  unmix_cmd->add_option("--widths-e", unmix_args.widths_e,
                        "comma-separated hidden widths, branch E");
  unmix_cmd->add_option("--widths-a", unmix_args.widths_a,
                        "comma-separated hidden widths, branch A");
  unmix_cmd->add_option("--iters", unmix_args.iters, "training iterations");
  unmix_cmd->add_option("--init", unmix_args.init, "vca|random|fcls");
  unmix_cmd->add_option("--seed", unmix_args.seed, "random seed");
  unmix_cmd->add_option("--out", unmix_args.out, "output directory")
      ->required();
  unmix_cmd->add_option("--threads", unmix_args.threads,
                        "worker threads (default: UNMIX_THREADS or cores)");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score against ground truth");
  eval_cmd->add_option("--est", eval_args.est, "estimate directory")
      ->required();
  eval_cmd->add_option("--truth", eval_args.truth, "truth directory")
      ->required();
  eval_cmd->add_option("--out", eval_args.out, "report JSON path")->required();

  RenderArgs render_args;
  CLI::App* render_cmd =
      app.add_subcommand("render", "abundance rasters to PGM maps");
  render_cmd->add_option("--abundances", render_args.abundances, "path stem")
      ->required();
  render_cmd->add_option("--size", render_args.size, "WxH")->required();
  render_cmd->add_option("--out", render_args.out, "output directory")
      ->required();

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck_cmd->add_option("--seed", gradcheck_args.seed, "random seed");
  gradcheck_cmd->add_option("--activation", gradcheck_args.activation,
                            "relu|tanh|sigmoid");
  gradcheck_cmd->add_option("--fd-step", gradcheck_args.fd_step, "")
      ->group("");  // test hook, hidden from help

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      run_synth(synth_args);
      return 0;
    }
    if (unmix_cmd->parsed()) return run_unmix(unmix_args);
    if (eval_cmd->parsed()) {
      run_eval(eval_args);
      return 0;
    }
    if (render_cmd->parsed()) {
      run_render(render_args);
      return 0;
    }
    if (gradcheck_cmd->parsed()) return run_gradcheck(gradcheck_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
