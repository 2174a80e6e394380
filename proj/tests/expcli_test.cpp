#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include "gmmdiff/experiments.hpp"

#ifndef GMMDIFF_CLI_PATH
#define GMMDIFF_CLI_PATH "gmmdiff"
#endif
#ifndef GMMDIFF_SOURCE_DIR
#define GMMDIFF_SOURCE_DIR "."
#endif

namespace gmmdiff {
namespace {

namespace fs = std::filesystem;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.seed = 99;
  c.gamma_grid = {0.5, 0.0, 1.0};
  c.dims = {4, 2};
  c.n_per_class = {64};
  c.steps = 800;
  c.moment_samples = 4000;
  c.trials = 200;
  c.threads = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gmmdiff_expcli_test";
  fs::create_directories(dir);
  return dir / name;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + GMMDIFF_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

// ---------------------------------------------------------------- config --

TEST(Config, DefaultsRoundTripThroughJson) {
  const ExperimentConfig c;
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c));
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  const auto j = read_json_file(std::string(GMMDIFF_SOURCE_DIR) + "/configs/default.json");
  EXPECT_EQ(config_to_json(config_from_json(j)), config_to_json(ExperimentConfig{}));
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"quick.json", "theorem_gap.json"})
    EXPECT_NO_THROW(config_from_json(read_json_file(std::string(GMMDIFF_SOURCE_DIR) + "/configs/" + name))) << name;
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const auto c = config_from_json(parse_json_text(R"({"seed": 5, "dims": [3]})"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.dims, std::vector<std::size_t>{3});
  EXPECT_EQ(c.trials, ExperimentConfig{}.trials);
}

TEST(Config, StrictSchema) {
  auto parse = [](const std::string& text) { return [text] { config_from_json(parse_json_text(text)); }; };
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "sed": 2})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"dims": [2]})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": -1})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "dims": []})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "dims": ["two"]})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "gamma_grid": [-0.5]})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "form": "diagonal"})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "class_label": 3})")), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "model": {"weights": [0.4, 0.4], "means": [[0], [1]]}})")),
            ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "model": {"weights": [1], "means": [[0]], "cov": 1}})")),
            ErrorCode::ConfigError);
  EXPECT_EQ(code_of(parse(R"({"seed": 1, "stats": {"mean": [0, 0], "cov": [[1, 0.5], [0, 1]]}})")),
            ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { parse_json_text("{\"seed\": 1,"); }), ErrorCode::ConfigError);
}

TEST(Config, NamedEnums) {
  const auto c = config_from_json(parse_json_text(R"({"seed": 1, "form": "rank-one", "distribution": "uniform"})"));
  EXPECT_EQ(c.form, CorruptionForm::RankOne);
  EXPECT_EQ(c.distribution, PerturbationDistribution::Uniform);
}

// ------------------------------------------------------------------- csv --

TEST(Csv, RealsRoundTripExactly) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(rng.normal(), static_cast<int>(rng.below(200)) - 100);
    EXPECT_EQ(parse_real(format_real(v)), v);
  }
  EXPECT_EQ(format_real(0.5), "0.5");
  EXPECT_EQ(code_of([] { parse_real("1.5x"); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([] { parse_real(""); }), ErrorCode::IoError);
}

TEST(Csv, Format) {
  CsvTable t;
  t.comments = {" note"};
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", ""}};
  EXPECT_EQ(to_csv_string(t), "# note\na,b\n1,x\n2,\n");
  const CsvTable back = parse_csv(to_csv_string(t));
  EXPECT_EQ(back.comments, t.comments);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
}

TEST(Csv, Errors) {
  CsvTable t;
  t.header = {"a"};
  t.rows = {{"1,2"}};
  EXPECT_EQ(code_of([&] { to_csv_string(t); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([] { parse_csv("a,b\n1\n"); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([] { parse_csv(""); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([] { parse_csv("a\r\n1\r\n"); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([] { write_csv_file("/nonexistent-dir/x.csv", CsvTable{{}, {"a"}, {}}); }), ErrorCode::IoError);
}

TEST(Csv, ResultRowsAreAFixpoint) {
  const auto rows = run_sweep(small_config(), SweepTarget::Entropy);
  const std::string once = to_csv_string(results_table(rows));
  const std::string twice = to_csv_string(results_table(rows_from_table(parse_csv(once))));
  EXPECT_EQ(once, twice);
}

// ----------------------------------------------------------------- sweep --

TEST(Sweep, EntropyRowsSortedWithZeroGapAtZeroGamma) {
  const auto rows = run_sweep(small_config(), SweepTarget::Entropy);
  ASSERT_FALSE(rows.empty());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto key = [](const ResultRow& r) { return std::tuple(r.gamma, r.dim, r.n_k); };
    EXPECT_LE(key(rows[i - 1]), key(rows[i]));
  }
  std::size_t zero_rows = 0;
  for (const auto& r : rows) {
    EXPECT_EQ(r.seed, 99u);
    EXPECT_EQ(r.wall_time_ms, 0.0);
    if (r.metric == "entropy_gap" && r.gamma == 0.0) {
      EXPECT_EQ(r.value, 0.0);
      ++zero_rows;
    }
    if (r.metric == "entropy_gap" && r.gamma > 0.0) {
      EXPECT_GT(r.value, 0.0);
    }
  }
  EXPECT_EQ(zero_rows, 2u);
}

TEST(Sweep, IndependentOfThreadCount) {
  auto c = small_config();
  for (auto target : {SweepTarget::Quality, SweepTarget::Moments}) {
    c.threads = 1;
    const std::string a = to_csv_string(results_table(run_sweep(c, target)));
    c.threads = 3;
    const std::string b = to_csv_string(results_table(run_sweep(c, target)));
    EXPECT_EQ(a, b) << target_name(target);
  }
}

TEST(Sweep, MomentsReportDeviations) {
  const auto rows = run_sweep(small_config(), SweepTarget::Moments);
  std::set<std::string> metrics;
  for (const auto& r : rows) {
    metrics.insert(r.metric);
    if (r.metric == "mean_max_z") {
      EXPECT_LT(r.value, 4.0);
    }
  }
  EXPECT_TRUE(metrics.contains("mean_max_abs_dev"));
  EXPECT_TRUE(metrics.contains("cov_max_abs_dev"));
}

TEST(Sweep, QualityGapPositiveAtRootNScaling) {
  auto c = small_config();
  c.gamma_grid = {0.5};
  c.dims = {8};
  c.n_per_class = {200};
  c.trials = 500;
  c.gamma_relative_to_sqrt_n = true;
  const auto rows = run_sweep(c, SweepTarget::Quality);
  bool seen = false;
  for (const auto& r : rows)
    if (r.metric == "w2_gap") {
      seen = true;
      EXPECT_DOUBLE_EQ(r.gamma_effective, 0.5 / std::sqrt(200.0));
      EXPECT_GT(r.value, 2.0 * r.standard_error);
    }
  EXPECT_TRUE(seen);
}

TEST(Sweep, RankDeficientCellIsAnError) {
  auto c = small_config();
  c.n_per_class = {3};
  EXPECT_EQ(code_of([&] { run_sweep(c, SweepTarget::Entropy); }), ErrorCode::RankDeficient);
}

// ---------------------------------------------------------------- sample --

TEST(Sample, ZeroDriftReturnsInitialNoise) {
  auto c = small_config();
  c.stats = StatsOverride{Vector(3, 0.0), Matrix::identity(3)};
  const CsvTable t = run_sample(c, 0.0);
  ASSERT_EQ(t.comments.size(), 1u);
  EXPECT_NE(t.comments[0].find("alpha=1;eigenvalues=1 1 1"), std::string::npos);
  EXPECT_EQ(t.header, (std::vector<std::string>{"z1", "z2", "z3"}));
  EXPECT_EQ(samples_from_table(parse_csv(to_csv_string(t))), initial_noise(3, c.moment_samples, c.seed));
}

TEST(Sample, CorruptionInflatesTrace) {
  auto c = small_config();
  c.moment_samples = 20000;
  c.steps = 4000;
  c.stats = StatsOverride{Vector{0.8, -0.6, 0.0}, Matrix{{1.2, 0.3, 0.0}, {0.3, 0.9, 0.1}, {0.0, 0.1, 0.7}}};
  const double g = 0.7;
  const double expected = 3.0 * g * g / (1.0 + g * g) * 1.0;
  const auto clean = empirical_moments(samples_from_table(run_sample(c, 0.0)));
  const auto corrupted = empirical_moments(samples_from_table(run_sample(c, g)));
  EXPECT_NEAR(corrupted.cov.trace() - clean.cov.trace(), expected, 0.05 * expected);
}

// ------------------------------------------------------------------- cli --

TEST(Cli, SweepIsByteIdenticalAcrossRuns) {
  const fs::path cfg = scratch("sweep.json");
  write_text(cfg, R"({"seed": 3, "dims": [2, 3], "n_per_class": [40], "trials": 100})");
  const fs::path a = scratch("a.csv"), b = scratch("b.csv");
  ASSERT_EQ(run_cli("sweep --target quality --config " + cfg.string() + " --out " + a.string()), 0);
  ASSERT_EQ(run_cli("sweep --target quality --config " + cfg.string() + " --threads 2 --out " + b.string()), 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_FALSE(slurp(a).empty());
  ASSERT_EQ(run_cli("sweep --target quality --config " + cfg.string() + " --seed 4 --out " + b.string()), 0);
  EXPECT_NE(slurp(a), slurp(b));
}

TEST(Cli, FlagsOverrideConfig) {
  const fs::path cfg = scratch("override.json");
  write_text(cfg, R"({"seed": 3, "dims": [2], "n_per_class": [40], "output": "/nonexistent-dir/never.csv"})");
  const fs::path out = scratch("override.csv");
  ASSERT_EQ(run_cli("sweep --config " + cfg.string() + " --form rank-one --seed 11 --out " + out.string()), 0);
  const auto rows = rows_from_table(read_csv_file(out.string()));
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows.front().seed, 11u);
  EXPECT_EQ(rows.front().form, "rank-one");
}

TEST(Cli, ExitCodes) {
  const fs::path bad = scratch("bad.json");
  write_text(bad, R"({"seed": 1, "unknown_key": true})");
  EXPECT_EQ(run_cli("verify --config " + bad.string()), 2);
  EXPECT_EQ(run_cli("verify --config " + scratch("missing.json").string()), 2);
  EXPECT_EQ(run_cli("sweep --target nope"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("--help"), 0);
  const fs::path ok = scratch("ok.json");
  write_text(ok, R"({"seed": 1, "dims": [2], "n_per_class": [40]})");
  EXPECT_EQ(run_cli("sweep --config " + ok.string() + " --out /nonexistent-dir/x.csv"), 1);
}

TEST(Cli, VerifyFlagsRankDeficiency) {
  const fs::path cfg = scratch("rank.json");
  write_text(cfg, R"({"seed": 1, "dims": [6], "n_per_class": [4], "trials": 100, "moment_samples": 2000,
                      "steps": 800, "gamma_grid": [0.5]})");
  const fs::path out = scratch("rank.csv");
  EXPECT_EQ(run_cli("verify --config " + cfg.string() + " --out " + out.string()), 1);
  const CsvTable t = read_csv_file(out.string());
  bool named = false;
  for (const auto& row : t.rows)
    if (row[0] == "full_rank[d=6;n=4]") {
      named = true;
      EXPECT_EQ(row[1], "fail");
      EXPECT_NE(row[5].find("RankDeficient"), std::string::npos);
    }
  EXPECT_TRUE(named);
}

TEST(Cli, VerifyPassesAndIsDeterministic) {
  const fs::path cfg = scratch("verify.json");
  write_text(cfg, R"({"seed": 2, "dims": [8], "n_per_class": [200], "trials": 300, "moment_samples": 5000,
                      "steps": 1000, "gamma_grid": [0.0, 1.0]})");
  const fs::path a = scratch("va.csv"), b = scratch("vb.csv");
  EXPECT_EQ(run_cli("verify --config " + cfg.string() + " --out " + a.string()), 0);
  EXPECT_EQ(run_cli("verify --config " + cfg.string() + " --threads 2 --out " + b.string()), 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Cli, SampleWritesRequestedRows) {
  const fs::path cfg = scratch("sample.json");
  write_text(cfg, R"({"seed": 8, "moment_samples": 300, "steps": 800, "n_per_class": [50]})");
  const fs::path out = scratch("samples.csv");
  ASSERT_EQ(run_cli("sample --config " + cfg.string() + " --gamma 0.25 --out " + out.string()), 0);
  const CsvTable t = read_csv_file(out.string());
  EXPECT_EQ(t.rows.size(), 300u);
  EXPECT_EQ(t.header.size(), 2u);
  ASSERT_EQ(t.comments.size(), 1u);
  EXPECT_NE(t.comments[0].find("gamma=0.25"), std::string::npos);
}

}  // namespace
}  // namespace gmmdiff
