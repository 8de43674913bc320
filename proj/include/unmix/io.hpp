#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "unmix/error.hpp"
#include "unmix/metrics.hpp"
#include "unmix/optimizer.hpp"
#include "unmix/synth.hpp"
#include "unmix/types.hpp"

namespace unmix {

using json = nlohmann::json;

struct CubeHeader {
  Index width = 0;
  Index height = 0;
  Index bands = 0;
  std::string dtype = "f32";
  std::string interleave = "bsq";
  std::string byte_order = "little";

  void validate() const {
    if (width < 1 || height < 1 || bands < 1)
      throw ValidationError("cube header dimensions must be positive");
    if (dtype != "f32") throw IoError("unsupported dtype \"" + dtype + "\"");
    if (interleave != "bsq")
      throw IoError("unsupported interleave \"" + interleave + "\"");
    if (byte_order != "little")
      throw IoError("unsupported byte order \"" + byte_order + "\"");
  }
};

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace detail

/// Matrix rows written consecutively as little-endian 32-bit floats
/// (band-sequential when rows are bands).
inline void write_raw_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  std::vector<unsigned char> buf;
  buf.reserve(static_cast<std::size_t>(m.size()) * 4);
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      buf.push_back(static_cast<unsigned char>(bits & 0xFF));
      buf.push_back(static_cast<unsigned char>((bits >> 8) & 0xFF));
      buf.push_back(static_cast<unsigned char>((bits >> 16) & 0xFF));
      buf.push_back(static_cast<unsigned char>((bits >> 24) & 0xFF));
    }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline Matrix read_raw_matrix(const std::string& path, Index rows,
                              Index cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path);
  const std::streamsize actual = in.tellg();
  const std::streamsize expected =
      static_cast<std::streamsize>(rows) * cols * 4;
  if (actual != expected)
    throw IoError("size mismatch in " + path + ": expected " +
                  std::to_string(expected) + " bytes, got " +
                  std::to_string(actual));
  in.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(actual));
  in.read(reinterpret_cast<char*>(buf.data()), actual);
  if (!in) throw IoError("read failed for " + path);
  Matrix m(rows, cols);
  std::size_t off = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const std::uint32_t bits =
          static_cast<std::uint32_t>(buf[off]) |
          (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
          (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
          (static_cast<std::uint32_t>(buf[off + 3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      m(r, c) = static_cast<double>(f);
      off += 4;
    }
  return m;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// `<stem>.json` header plus `<stem>.raw` samples (f32, little-endian,
/// band-sequential). Round-trips are value-exact at 32-bit precision.
inline void write_cube(const HsiCube& cube, const std::string& stem) {
  json header = {{"width", cube.width},
                 {"height", cube.height},
                 {"bands", cube.bands()},
                 {"dtype", "f32"},
                 {"interleave", "bsq"},
                 {"byte_order", "little"}};
  detail::write_text(stem + ".json", header.dump(2) + "\n");
  write_raw_matrix(stem + ".raw", cube.data);
}

inline HsiCube read_cube(const std::string& stem) {
  const json j = detail::parse_json_file(stem + ".json");
  CubeHeader h;
  for (const char* key : {"width", "height", "bands", "dtype", "interleave",
                          "byte_order"})
    if (!j.contains(key))
      throw IoError("cube header missing key \"" + std::string(key) + "\"");
  if (!j["width"].is_number_integer() || !j["height"].is_number_integer() ||
      !j["bands"].is_number_integer())
    throw ValidationError("cube header dimensions must be integers");
  h.width = j["width"].get<Index>();
  h.height = j["height"].get<Index>();
  h.bands = j["bands"].get<Index>();
  h.dtype = j["dtype"].get<std::string>();
  h.interleave = j["interleave"].get<std::string>();
  h.byte_order = j["byte_order"].get<std::string>();
  h.validate();
  Matrix data =
      read_raw_matrix(stem + ".raw", h.bands, h.width * h.height);
  return validate_cube(std::move(data), h.width, h.height);
}

struct SpectralLibrary {
  std::vector<double> wavelengths;
  EndmemberMatrix endmembers;
};

/// CSV with a header row; column 1 is wavelength (nm), the rest are spectra.
/// Rows are sorted ascending by wavelength; duplicates are rejected.
inline SpectralLibrary read_spectral_library(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");

  std::vector<std::vector<double>> rows;
  std::size_t columns = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto begin = cell.find_first_not_of(" \t\r");
      if (begin == std::string::npos)
        throw IoError(path + ": empty cell at row " +
                      std::to_string(line_no));
      const auto end = cell.find_last_not_of(" \t\r");
      const std::string token = cell.substr(begin, end - begin + 1);
      char* parse_end = nullptr;
      const double v = std::strtod(token.c_str(), &parse_end);
      if (parse_end != token.c_str() + token.size() || !std::isfinite(v))
        throw IoError(path + ": non-numeric cell \"" + token + "\" at row " +
                      std::to_string(line_no));
      row.push_back(v);
    }
    if (row.size() < 2)
      throw IoError(path + ": need at least two columns at row " +
                    std::to_string(line_no));
    if (columns == 0) {
      columns = row.size();
    } else if (row.size() != columns) {
      throw IoError(path + ": ragged row " + std::to_string(line_no) +
                    ": expected " + std::to_string(columns) +
                    " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path + ": no data rows");

  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a[0] < b[0]; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i][0] > rows[i - 1][0]))
      throw IoError(path + ": duplicate wavelength " +
                    detail::format_double(rows[i][0]));

  SpectralLibrary lib;
  lib.wavelengths.reserve(rows.size());
  Matrix e(static_cast<Index>(rows.size()), static_cast<Index>(columns - 1));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    lib.wavelengths.push_back(rows[r][0]);
    for (std::size_t c = 1; c < columns; ++c)
      e(static_cast<Index>(r), static_cast<Index>(c - 1)) = rows[r][c];
  }
  lib.endmembers = EndmemberMatrix{std::move(e)};
  return lib;
}

/// Companion writer in the same CSV dialect; band indices stand in for
/// wavelengths when none are given.
inline void write_spectral_library(const std::string& path,
                                   const std::vector<double>& wavelengths,
                                   const EndmemberMatrix& e) {
  if (!wavelengths.empty() &&
      static_cast<Index>(wavelengths.size()) != e.bands())
    throw ValidationError("wavelength list length must equal the band count");
  std::ostringstream out;
  out << "wavelength";
  for (Index k = 0; k < e.count(); ++k) out << ",e" << (k + 1);
  out << "\n";
  for (Index p = 0; p < e.bands(); ++p) {
    out << detail::format_double(
        wavelengths.empty() ? static_cast<double>(p) : wavelengths[p]);
    for (Index k = 0; k < e.count(); ++k)
      out << "," << detail::format_double(e.data(p, k));
    out << "\n";
  }
  detail::write_text(path, out.str());
}

/// One binary PGM per endmember: round(255*clamp(a,0,1)), half away from
/// zero, row-major, named abundance_<k>.pgm.
inline void write_abundance_maps(const AbundanceMatrix& a, Index width,
                                 Index height, const std::string& dir) {
  if (a.pixels() != width * height)
    throw ValidationError("abundance pixel count " +
                          std::to_string(a.pixels()) +
                          " does not match " + std::to_string(width) + "x" +
                          std::to_string(height));
  for (Index k = 0; k < a.count(); ++k) {
    const std::string path =
        (std::filesystem::path(dir) / ("abundance_" + std::to_string(k) +
                                       ".pgm")).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(a.pixels()));
    for (Index n = 0; n < a.pixels(); ++n) {
      const double v = std::clamp(a.data(k, n), 0.0, 1.0);
      bytes[static_cast<std::size_t>(n)] =
          static_cast<unsigned char>(std::lround(255.0 * v));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
  }
}

struct RunConfig {
  Hyperparams hp;
  std::uint64_t seed = 0;
  Index endmembers = 0;
  Index width = 0;
  Index height = 0;
  Index bands = 0;
  std::string init = "vca";
};

namespace detail {

inline json config_to_json(const RunConfig& c) {
  return json{{"alpha", c.hp.alpha},
              {"beta", c.hp.beta},
              {"delta", c.hp.delta},
              {"activation", activation_name(c.hp.activation)},
              {"widths_e", c.hp.widths_e},
              {"widths_a", c.hp.widths_a},
              {"iterations", c.hp.iterations},
              {"seed", c.seed},
              {"endmembers", c.endmembers},
              {"width", c.width},
              {"height", c.height},
              {"bands", c.bands},
              {"init", c.init}};
}

}  // namespace detail

inline RunConfig config_from_json(const json& root) {
  const json& j = root.contains("config") ? root.at("config") : root;
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  static const std::vector<std::string> required = {
      "alpha", "beta",  "delta",      "activation", "widths_e",
      "widths_a", "iterations", "seed",   "endmembers", "width",
      "height", "bands", "init"};
  for (const std::string& key : required)
    if (!j.contains(key))
      throw ValidationError("config missing required key \"" + key + "\"");
  for (const auto& [key, value] : j.items())
    if (std::find(required.begin(), required.end(), key) == required.end())
      throw ValidationError("unknown config key \"" + key + "\"");
  try {
    RunConfig c;
    c.hp.alpha = j.at("alpha").get<double>();
    c.hp.beta = j.at("beta").get<double>();
    c.hp.delta = j.at("delta").get<double>();
    c.hp.activation = activation_from_name(j.at("activation").get<std::string>());
    c.hp.widths_e = j.at("widths_e").get<std::vector<Index>>();
    c.hp.widths_a = j.at("widths_a").get<std::vector<Index>>();
    c.hp.iterations = j.at("iterations").get<Index>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.endmembers = j.at("endmembers").get<Index>();
    c.width = j.at("width").get<Index>();
    c.height = j.at("height").get<Index>();
    c.bands = j.at("bands").get<Index>();
    c.init = j.at("init").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config value of wrong type: ") +
                          e.what());
  }
}

inline RunConfig read_config(const std::string& path) {
  return config_from_json(detail::parse_json_file(path));
}

/// The one-document run record: configuration, metrics (truth-dependent
/// fields are null when no ground truth was available), per-iteration
/// objective history, the estimated endmembers column-major, and wall time.
inline void write_results(const std::string& path, const RunConfig& config,
                          const EvalReport* eval, double recon,
                          const TrainHistory& history,
                          const EndmemberMatrix& endmembers,
                          double timing_seconds) {
  json metrics;
  if (eval) {
    metrics["mean_sad_rad"] = eval->mean_sad_rad;
    metrics["mean_sad_deg"] = eval->mean_sad_deg;
    metrics["per_endmember_sad_rad"] = eval->per_endmember_sad_rad;
    metrics["armse"] = eval->armse;
  } else {
    metrics["mean_sad_rad"] = nullptr;
    metrics["mean_sad_deg"] = nullptr;
    metrics["per_endmember_sad_rad"] = nullptr;
    metrics["armse"] = nullptr;
  }
  metrics["recon_rmse"] = recon;

  json hist = json::array();
  for (const TrainRecord& r : history.records)
    hist.push_back({{"iter", r.iter},
                    {"j", r.j},
                    {"j_e", r.j_e},
                    {"j_a", r.j_a},
                    {"j_m", r.j_m},
                    {"j_r", r.j_r}});

  std::vector<double> e_flat;
  e_flat.reserve(static_cast<std::size_t>(endmembers.data.size()));
  for (Index k = 0; k < endmembers.count(); ++k)
    for (Index p = 0; p < endmembers.bands(); ++p)
      e_flat.push_back(endmembers.data(p, k));

  json doc = {{"config", detail::config_to_json(config)},
              {"metrics", metrics},
              {"history", hist},
              {"endmembers", e_flat},
              {"timing_seconds", timing_seconds}};
  detail::write_text(path, doc.dump(2) + "\n");
}

inline void write_eval_report(const std::string& path, const EvalReport& r) {
  json doc = {{"mean_sad_rad", r.mean_sad_rad},
              {"mean_sad_deg", r.mean_sad_deg},
              {"per_endmember_sad_rad", r.per_endmember_sad_rad},
              {"armse", r.armse},
              {"recon_rmse", r.recon_rmse},
              {"permutation", r.permutation}};
  detail::write_text(path, doc.dump(2) + "\n");
}

struct Provenance {
  std::uint64_t seed = 0;
  std::string model = "lmm";
  double snr_db = kNoNoise;  // +inf encodes "none"
  double concentration = 1.0;
  Index endmembers = 0;
  Index bands = 0;
  Index width = 0;
  Index height = 0;
};

inline void write_provenance(const std::string& path, const Provenance& p) {
  json doc = {{"seed", p.seed},
              {"model", p.model},
              {"snr_db", p.snr_db == kNoNoise ? json(nullptr) : json(p.snr_db)},
              {"concentration", p.concentration},
              {"endmembers", p.endmembers},
              {"bands", p.bands},
              {"width", p.width},
              {"height", p.height},
              {"abundances_raw",
               {{"dtype", "f32"},
                {"interleave", "bsq"},
                {"byte_order", "little"},
                {"bands", p.endmembers},
                {"width", p.width},
                {"height", p.height}}}};
  detail::write_text(path, doc.dump(2) + "\n");
}

inline Provenance read_provenance(const std::string& path) {
  const json j = detail::parse_json_file(path);
  for (const char* key :
       {"seed", "model", "snr_db", "concentration", "endmembers", "bands",
        "width", "height"})
    if (!j.contains(key))
      throw IoError("provenance missing key \"" + std::string(key) + "\"");
  Provenance p;
  p.seed = j["seed"].get<std::uint64_t>();
  p.model = j["model"].get<std::string>();
  p.snr_db = j["snr_db"].is_null() ? kNoNoise : j["snr_db"].get<double>();
  p.concentration = j["concentration"].get<double>();
  p.endmembers = j["endmembers"].get<Index>();
  p.bands = j["bands"].get<Index>();
  p.width = j["width"].get<Index>();
  p.height = j["height"].get<Index>();
  return p;
}

}  // namespace unmix
