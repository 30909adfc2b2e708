#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mlr/bench.hpp"
#include "mlr/io.hpp"

using namespace mlr;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.scenario = "centralized";
  cfg.algorithm = "wmlr";
  cfg.gen.n = 300;
  cfg.gen.d = 6;
  cfg.gen.snr = 4.0;
  cfg.solver.iters = 10;
  cfg.seed = 60;
  cfg.output_dir = "";
  return cfg;
}

std::string tmp_dir(const std::string& name) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(path);
  return path.string();
}

}  // namespace

TEST_CASE("config json round trips every field") {
  ExperimentConfig cfg;
  cfg.scenario = "federated";
  cfg.algorithm = "f-wmlr";
  cfg.gen = {12340, 64, 5.0, 1.25, 3.5};
  cfg.fed = {10, "per-sample", 0.5, 2, 77, 30, 0.005, 0.3};
  cfg.solver.lambda = 0.41;
  cfg.solver.alpha_max = 1.2;
  cfg.solver.alpha_min = 0.12;
  cfg.solver.sigma_mode = "estimated";
  cfg.solver.sigma2 = 2.0;
  cfg.solver.noise_mode = "resample";
  cfg.solver.init_scale = 0.25;
  cfg.solver.alpha = 0.9;
  cfg.solver.sigma_x = "identity";
  cfg.solver.iters = 55;
  cfg.eval_against = "beta.csv";
  cfg.output_dir = "out/dir";
  cfg.seed = 99;
  ExperimentConfig back = parse_config(emit_config(cfg));
  CHECK(back == cfg);
}

TEST_CASE("parse_config rejects unknown keys and bad values") {
  ExperimentConfig cfg = tiny_config();
  std::string good = emit_config(cfg);
  CHECK(parse_config(good) == cfg);
  std::string with_extra = good;
  with_extra.insert(with_extra.rfind('}'), ",\"extra_key\": 1\n");
  CHECK_THROWS(parse_config(with_extra));
  CHECK_THROWS(parse_config("{"));
}

TEST_CASE("validate names the offending field") {
  ExperimentConfig cfg = tiny_config();
  cfg.algorithm = "nonsense";
  CHECK_THROWS_WITH_AS(validate(cfg),
                       doctest::Contains("algorithm"),
                       std::invalid_argument);
  cfg = tiny_config();
  cfg.gen.n = 0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = tiny_config();
  cfg.solver.sigma_x = "diagonal";
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("sigma_x"),
                       std::invalid_argument);
  cfg = tiny_config();
  cfg.scenario = "federated";  // federated scenario needs an f- algorithm
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = tiny_config();
  cfg.fed.agents = 7;
  cfg.gen.n = 48;  // not divisible by agents
  cfg.scenario = "federated";
  cfg.algorithm = "f-wmlr";
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
}

TEST_CASE("log_grid spaces points geometrically with exact endpoints") {
  std::vector<double> g = log_grid(0.1, 2.0, 10);
  REQUIRE(g.size() == 10);
  CHECK(g.front() == 0.1);
  CHECK(g.back() == 2.0);
  double ratio = g[1] / g[0];
  for (std::size_t i = 1; i + 1 < g.size(); ++i) {
    CHECK(g[i + 1] / g[i] == doctest::Approx(ratio).epsilon(1e-10));
  }
  std::vector<double> one = log_grid(0.7, 5.0, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 0.7);
  CHECK_THROWS(log_grid(0.0, 1.0, 3));
  CHECK_THROWS(log_grid(1.0, 2.0, 0));
}

TEST_CASE("execute is deterministic and reports the trace tail") {
  ExperimentConfig cfg = tiny_config();
  RunSummary a = execute(cfg);
  RunSummary b = execute(cfg);
  CHECK(a.final_rel_err == b.final_rel_err);
  CHECK(a.final_nll == b.final_nll);
  CHECK(a.rel_err_series == b.rel_err_series);
  CHECK(a.rounds_logged == static_cast<int>(a.rel_err_series.size()));
  CHECK(a.scalars_sent == 0);
  CHECK(a.final_rel_err == a.rel_err_series.back());
  CHECK(a.config == cfg);
}

TEST_CASE("execute covers the em family and federated accounting") {
  ExperimentConfig cfg = tiny_config();
  cfg.algorithm = "em";
  RunSummary em = execute(cfg);
  CHECK(std::isfinite(em.final_nll));

  cfg.algorithm = "gem";
  cfg.solver.alpha = 0.3;
  RunSummary gem = execute(cfg);
  CHECK(std::isfinite(gem.final_nll));

  ExperimentConfig fed = tiny_config();
  fed.scenario = "federated";
  fed.algorithm = "f-gem";
  fed.gen.n = 300;
  fed.fed.agents = 10;
  fed.fed.rounds = 8;
  RunSummary fs = execute(fed);
  CHECK(fs.scalars_sent > 0);
  CHECK(fs.rounds_logged == 8);
}

TEST_CASE("run_experiment writes parseable artifacts") {
  ExperimentConfig cfg = tiny_config();
  cfg.output_dir = tmp_dir("mlr_test_run");
  RunSummary s = run_experiment(cfg);
  CHECK(s.trace_csv == "trace.csv");
  Trace trace = read_trace_csv(cfg.output_dir + "/trace.csv");
  CHECK(trace.size() == s.rel_err_series.size());
  std::string summary_text = read_text(cfg.output_dir + "/summary.json");
  CHECK(schema_violations(summary_text, summary_schema_json()).empty());
  std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("emit_summary validates against the builtin schema") {
  RunSummary s = execute(tiny_config());
  CHECK(schema_violations(emit_summary(s), summary_schema_json()).empty());
}

TEST_CASE("the checked in schema file is the builtin schema") {
  std::string on_disk =
      read_text(std::string(MLR_SOURCE_DIR) + "/docs/summary.schema.json");
  CHECK(on_disk == summary_schema_json());
}

TEST_CASE("schema_violations catches structural drift") {
  const std::string& schema = summary_schema_json();
  CHECK_FALSE(schema_violations("{}", schema).empty());
  RunSummary s = execute(tiny_config());
  std::string good = emit_summary(s);
  std::string renamed = good;
  auto pos = renamed.find("\"final_nll\"");
  REQUIRE(pos != std::string::npos);
  renamed.replace(pos, 11, "\"final_mll\"");
  CHECK_FALSE(schema_violations(renamed, schema).empty());
}

TEST_CASE("sweep selects the best grid point with ties to the left") {
  ExperimentConfig cfg = tiny_config();
  cfg.output_dir = tmp_dir("mlr_test_sweep");
  SweepSpec spec{"lambda", 4, 0.1, 1.0, "min_final_nll"};
  SweepResult sw = sweep(cfg, spec);
  REQUIRE(sw.points.size() == 4);
  REQUIRE(sw.best_index >= 0);
  double best_nll = sw.points[sw.best_index].final_nll;
  for (const SweepPoint& p : sw.points) {
    if (!p.failed) {
      CHECK(best_nll <= p.final_nll + 1e-15);
    }
  }
  CHECK(sw.best_config.solver.lambda ==
        doctest::Approx(sw.points[sw.best_index].value).epsilon(1e-12));
  // Artifact lands under the output dir.
  CHECK(std::filesystem::exists(cfg.output_dir + "/sweep.csv"));
  std::filesystem::remove_all(cfg.output_dir);

  ExperimentConfig quiet = tiny_config();
  SweepSpec conv{"lambda", 3, 0.1, 1.0, "fastest_convergence"};
  SweepResult sc = sweep(quiet, conv);
  REQUIRE(sc.best_index >= 0);
  int best_round = sc.points[sc.best_index].convergence_round;
  for (const SweepPoint& p : sc.points) {
    if (!p.failed && !did_not_converge(p.final_rel_err)) {
      CHECK(best_round <= p.convergence_round);
    }
  }
}

TEST_CASE("parse_sweep reads the optional block") {
  ExperimentConfig cfg = tiny_config();
  std::string text = emit_config(cfg);
  SweepSpec defaults = parse_sweep(text);
  CHECK(defaults.parameter == "lambda");
  CHECK(defaults.count == 10);

  std::string with_sweep = text;
  with_sweep.insert(
      with_sweep.rfind('}'),
      ",\"sweep\": {\"parameter\": \"alpha\", \"count\": 3, \"lo\": 0.5, "
      "\"hi\": 2.0, \"selection\": \"fastest_convergence\"}\n");
  SweepSpec spec = parse_sweep(with_sweep);
  CHECK(spec.parameter == "alpha");
  CHECK(spec.count == 3);
  CHECK(spec.lo == 0.5);
  CHECK(spec.hi == 2.0);
  CHECK(spec.selection == "fastest_convergence");
}

TEST_CASE("the fast invariant suite passes") {
  std::ostringstream log;
  int failures = run_check_suite(3, log);
  INFO(log.str());
  CHECK(failures == 0);
}
