#pragma once

// Experiment configuration: one JSON document, strict schema. Unknown keys,
// wrong types and out-of-range values are all ConfigError.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmmdiff/error.hpp"
#include "gmmdiff/matrix.hpp"
#include "gmmdiff/model.hpp"
#include "gmmdiff/score.hpp"

namespace gmmdiff {

/// Explicit class moments used instead of drawing a training set.
struct StatsOverride {
  Vector mean;
  Matrix cov;
};

struct ExperimentConfig {
  std::uint64_t seed = 20240611;
  MixtureModel model{{0.5, 0.5}, {{1.0, 0.0}, {-1.0, 0.0}}};
  int class_label = 1;
  std::vector<double> gamma_grid{0.0, 0.5, 1.0};
  std::vector<std::size_t> dims{2, 8};
  std::vector<std::size_t> n_per_class{200};
  double horizon = 8.0;
  std::size_t steps = 4000;
  std::size_t moment_samples = 50000;
  std::size_t trials = 2000;
  CorruptionForm form = CorruptionForm::Isotropic;
  PerturbationDistribution distribution = PerturbationDistribution::Gaussian;
  double ridge = 0.0;
  double mean_norm_sq = 1.0;  // ||mu||^2 of the per-cell component in sweeps
  bool gamma_relative_to_sqrt_n = false;
  double sample_gamma = 0.5;
  std::optional<StatsOverride> stats;
  std::size_t threads = 0;  // 0: THREADS env var, else hardware concurrency
  std::string output;
  bool record_timing = false;
};

inline std::string form_name(CorruptionForm f) {
  return f == CorruptionForm::Isotropic ? "isotropic" : "rank-one";
}

inline std::string distribution_name(PerturbationDistribution d) {
  return d == PerturbationDistribution::Gaussian ? "gaussian" : "uniform";
}

inline CorruptionForm parse_form(const std::string& s) {
  if (s == "isotropic") return CorruptionForm::Isotropic;
  if (s == "rank-one") return CorruptionForm::RankOne;
  throw Error(ErrorCode::ConfigError, "form must be 'isotropic' or 'rank-one', got '" + s + "'");
}

inline PerturbationDistribution parse_distribution(const std::string& s) {
  if (s == "gaussian") return PerturbationDistribution::Gaussian;
  if (s == "uniform") return PerturbationDistribution::Uniform;
  throw Error(ErrorCode::ConfigError, "distribution must be 'gaussian' or 'uniform', got '" + s + "'");
}

inline nlohmann::json model_to_json(const MixtureModel& m) {
  return {{"weights", m.weights()}, {"means", m.means()}};
}

inline MixtureModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "model must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "weights" && key != "means") throw Error(ErrorCode::ConfigError, "unknown key 'model." + key + "'");
  if (!j.contains("weights") || !j.contains("means"))
    throw Error(ErrorCode::ConfigError, "model needs 'weights' and 'means'");
  try {
    return MixtureModel(j.at("weights").get<Vector>(), j.at("means").get<std::vector<Vector>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("model: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("model: ") + e.what());
  }
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j = {
      {"seed", c.seed},
      {"model", model_to_json(c.model)},
      {"class_label", c.class_label},
      {"gamma_grid", c.gamma_grid},
      {"dims", c.dims},
      {"n_per_class", c.n_per_class},
      {"horizon", c.horizon},
      {"steps", c.steps},
      {"moment_samples", c.moment_samples},
      {"trials", c.trials},
      {"form", form_name(c.form)},
      {"distribution", distribution_name(c.distribution)},
      {"ridge", c.ridge},
      {"mean_norm_sq", c.mean_norm_sq},
      {"gamma_relative_to_sqrt_n", c.gamma_relative_to_sqrt_n},
      {"sample_gamma", c.sample_gamma},
      {"threads", c.threads},
      {"output", c.output},
      {"record_timing", c.record_timing},
  };
  if (c.stats) {
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < c.stats->cov.rows(); ++i) {
      const auto r = c.stats->cov.row(i);
      rows.emplace_back(r.begin(), r.end());
    }
    j["stats"] = {{"mean", c.stats->mean}, {"cov", rows}};
  }
  return j;
}

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("'") + key + "': " + e.what());
  }
}

inline std::size_t get_count(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw Error(ErrorCode::ConfigError, std::string("'") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::vector<std::size_t> get_counts(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array()) throw Error(ErrorCode::ConfigError, std::string("'") + key + "' must be an array");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned())
      throw Error(ErrorCode::ConfigError, std::string("'") + key + "' entries must be non-negative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigError, what);
}

inline StatsOverride stats_from_json(const nlohmann::json& j) {
  require(j.is_object(), "stats must be an object");
  for (const auto& [key, _] : j.items()) require(key == "mean" || key == "cov", "unknown key 'stats." + key + "'");
  require(j.contains("mean") && j.contains("cov"), "stats needs 'mean' and 'cov'");
  const auto mean = get_field<Vector>(j, "mean");
  const auto rows = get_field<std::vector<Vector>>(j, "cov");
  require(!mean.empty() && rows.size() == mean.size(), "stats.cov must be d x d with d = len(stats.mean)");
  Matrix cov(mean.size(), mean.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == mean.size(), "stats.cov must be square");
    for (std::size_t k = 0; k < mean.size(); ++k) {
      require(std::isfinite(rows[i][k]), "stats.cov entries must be finite");
      cov(i, k) = rows[i][k];
    }
  }
  for (double v : mean) require(std::isfinite(v), "stats.mean entries must be finite");
  for (std::size_t i = 0; i < cov.rows(); ++i)
    for (std::size_t k = 0; k < i; ++k) require(cov(i, k) == cov(k, i), "stats.cov must be symmetric");
  return {mean, cov};
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  using detail::require;
  require(!c.gamma_grid.empty() && !c.dims.empty() && !c.n_per_class.empty(), "grids must be nonempty");
  for (double g : c.gamma_grid) require(std::isfinite(g) && g >= 0.0, "gamma_grid entries must be finite and >= 0");
  for (auto d : c.dims) require(d >= 1, "dims entries must be >= 1");
  for (auto n : c.n_per_class) require(n >= 1, "n_per_class entries must be >= 1");
  require(c.class_label >= 1 && static_cast<std::size_t>(c.class_label) <= c.model.classes(),
          "class_label must be in 1..number of model components");
  require(std::isfinite(c.horizon) && c.horizon > 0.0, "horizon must be > 0");
  require(c.steps >= 1, "steps must be >= 1");
  require(c.moment_samples >= 2, "moment_samples must be >= 2");
  require(c.trials >= 2, "trials must be >= 2");
  require(std::isfinite(c.ridge) && c.ridge >= 0.0, "ridge must be >= 0");
  require(std::isfinite(c.mean_norm_sq) && c.mean_norm_sq >= 0.0, "mean_norm_sq must be >= 0");
  require(std::isfinite(c.sample_gamma) && c.sample_gamma >= 0.0, "sample_gamma must be >= 0");
}

/// Every key is optional except `seed`; omitted keys keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::get_count;
  using detail::get_field;
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  static const std::set<std::string> known{
      "seed",  "model",          "class_label",  "gamma_grid", "dims",         "n_per_class",
      "horizon", "steps",        "moment_samples", "trials",   "form",         "distribution",
      "ridge", "mean_norm_sq",   "gamma_relative_to_sqrt_n", "sample_gamma", "stats", "threads",
      "output", "record_timing"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
  if (!j.contains("seed")) throw Error(ErrorCode::ConfigError, "'seed' is required");

  ExperimentConfig c;
  c.seed = get_field<std::uint64_t>(j, "seed");
  if (!j.at("seed").is_number_unsigned()) throw Error(ErrorCode::ConfigError, "'seed' must be a non-negative integer");
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("class_label")) c.class_label = get_field<int>(j, "class_label");
  if (j.contains("gamma_grid")) c.gamma_grid = get_field<std::vector<double>>(j, "gamma_grid");
  if (j.contains("dims")) c.dims = detail::get_counts(j, "dims");
  if (j.contains("n_per_class")) c.n_per_class = detail::get_counts(j, "n_per_class");
  if (j.contains("horizon")) c.horizon = get_field<double>(j, "horizon");
  if (j.contains("steps")) c.steps = get_count(j, "steps");
  if (j.contains("moment_samples")) c.moment_samples = get_count(j, "moment_samples");
  if (j.contains("trials")) c.trials = get_count(j, "trials");
  if (j.contains("form")) c.form = parse_form(get_field<std::string>(j, "form"));
  if (j.contains("distribution")) c.distribution = parse_distribution(get_field<std::string>(j, "distribution"));
  if (j.contains("ridge")) c.ridge = get_field<double>(j, "ridge");
  if (j.contains("mean_norm_sq")) c.mean_norm_sq = get_field<double>(j, "mean_norm_sq");
  if (j.contains("gamma_relative_to_sqrt_n"))
    c.gamma_relative_to_sqrt_n = get_field<bool>(j, "gamma_relative_to_sqrt_n");
  if (j.contains("sample_gamma")) c.sample_gamma = get_field<double>(j, "sample_gamma");
  if (j.contains("stats")) c.stats = detail::stats_from_json(j.at("stats"));
  if (j.contains("threads")) c.threads = get_count(j, "threads");
  if (j.contains("output")) c.output = get_field<std::string>(j, "output");
  if (j.contains("record_timing")) c.record_timing = get_field<bool>(j, "record_timing");
  validate(c);
  return c;
}

inline nlohmann::json parse_json_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed JSON: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str());
}

}  // namespace gmmdiff
