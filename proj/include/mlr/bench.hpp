#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mlr/em.hpp"
#include "mlr/fedsim.hpp"
#include "mlr/model.hpp"
#include "mlr/wmlr.hpp"

namespace mlr {

// Experiment configuration, one-to-one with the JSON config file. All fields
// that derive randomness inherit the single top-level seed at run time, so a
// config plus a seed pins every byte of the output (wall times aside).
struct DataSpec {
  long long n = 10000;
  long long d = 128;
  double snr = 10.0;
  double sigma2 = 1.0;
  double norm_bound = 0.0;  // > 0 switches x to the norm-rejected law

  bool operator==(const DataSpec&) const = default;
};

struct FedSpec {
  long long agents = 0;
  std::string assignment = "per-agent";  // per-agent | per-sample
  double participation = 1.0;
  int local_steps = 1;
  int rounds = 200;
  int fem_inner_max = 50;
  double fem_tol = 0.01;
  double fem_alpha = 0.08;

  bool operator==(const FedSpec&) const = default;
};

struct SolverSpec {
  // minimax family
  double lambda = 0.5;
  double alpha_max = 0.0;  // <= 0: 1 / (2 lambda)
  double alpha_min = 0.0;  // <= 0: alpha_max / 10
  std::string sigma_mode = "known";  // known | estimated
  double sigma2 = 1.0;
  std::string noise_mode = "fixed";  // fixed | resample
  double init_scale = 0.0;           // <= 0: 1/sqrt(d)
  // em family
  double alpha = 0.5;
  std::string sigma_x = "empirical";  // empirical | identity (em only)
  // shared
  int iters = 100;

  bool operator==(const SolverSpec&) const = default;
};

struct ExperimentConfig {
  std::string scenario = "centralized";  // centralized | federated
  std::string algorithm = "wmlr";  // wmlr | em | gem | f-wmlr | f-em | f-gem
  DataSpec gen;
  FedSpec fed;
  SolverSpec solver;
  std::string eval_against;  // path to a beta* column CSV; empty = synthetic truth
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  bool operator==(const ExperimentConfig&) const = default;
};

bool is_federated_algorithm(const std::string& algorithm);

// Throws std::invalid_argument with a message naming the offending field.
void validate(const ExperimentConfig& cfg);

// Canonical JSON text (sorted keys, 2-space indent). parse(emit(cfg)) == cfg
// for every valid config; parse rejects unknown keys.
std::string emit_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

struct RunSummary {
  ExperimentConfig config;
  double final_rel_err = 0.0;
  double final_nll = 0.0;
  int convergence_round = 0;  // 1.05-rule round over the rel-err series
  bool dnc = false;
  int rounds_logged = 0;
  long long scalars_sent = 0;  // total over rounds; 0 when centralized
  double wall_ms = 0.0;
  std::string trace_csv;   // artifact names relative to output_dir; "" if
  std::string rounds_csv;  // the scenario does not produce that file
  std::vector<double> rel_err_series;  // one entry per trace row / round
};

// Runs the configured algorithm on freshly generated data; writes nothing.
RunSummary execute(const ExperimentConfig& cfg);

// execute() plus artifacts under cfg.output_dir: trace.csv or rounds.csv,
// and summary.json. Returns the summary it wrote.
RunSummary run_experiment(const ExperimentConfig& cfg);

std::string emit_summary(const RunSummary& summary);

// Minimal structural validator for the subset of JSON Schema used by
// docs/summary.schema.json (type/properties/required/additionalProperties).
// Returns a list of violations; empty means valid.
std::vector<std::string> schema_violations(const std::string& instance_json,
                                           const std::string& schema_json);

// The summary schema as built into the binary; docs/summary.schema.json is
// the checked-in copy and the two must stay identical.
const std::string& summary_schema_json();

struct SweepSpec {
  std::string parameter = "lambda";  // lambda | alpha
  int count = 10;
  double lo = 0.1;
  double hi = 2.0;
  std::string selection = "min_final_nll";  // min_final_nll |
                                            // fastest_convergence
};

// count points 10^linspace(log10 lo, log10 hi, count), endpoints included.
std::vector<double> log_grid(double lo, double hi, int count);

struct SweepPoint {
  double value = 0.0;
  double final_nll = 0.0;
  double final_rel_err = 0.0;
  int convergence_round = 0;
  bool failed = false;
  std::string error;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  int best_index = -1;
  ExperimentConfig best_config;
};

// Evaluates every grid point with the same seed (identical data), selects by
// spec.selection with ties toward the smaller parameter value, and writes
// sweep.csv under cfg.output_dir. Throws if every point fails.
SweepResult sweep(const ExperimentConfig& cfg, const SweepSpec& spec);

// Optional "sweep" object in a config file; absent fields keep defaults.
SweepSpec parse_sweep(const std::string& json_text);

struct CellResult {
  std::string label;
  std::string algorithm;
  double snr = 0.0;
  long long n = 0;
  long long agents = 0;
  double rel_err = 0.0;
  double nll = 0.0;
  int convergence_round = -1;
  bool dnc = false;
  double q25 = 0.0;  // quartile cells only, else NaN
  double q75 = 0.0;
  std::string check;  // what the pass flag asserts
  bool pass = false;
  double wall_ms = 0.0;
};

struct ReproduceReport {
  std::string table;
  std::string scale;
  std::uint64_t seed = 0;
  std::vector<CellResult> cells;
  bool all_pass = false;
};

// table in {table1, table2, table4}, scale in {desk, paper}. Runs the preset
// experiment matrix, marks each cell against its band, and writes report.csv
// and report.json under out_dir. Cell failures do not throw.
ReproduceReport reproduce(const std::string& table, const std::string& scale,
                          const std::string& out_dir, std::uint64_t seed);

std::string render_report(const ReproduceReport& report);

// Fast invariant suite for `mlrbench check`: config/CSV round-trips, run
// determinism, single-agent and equal-shard federated equivalence, gradient
// spot checks, M-step stationarity. Returns the number of failed checks and
// streams one line per check to log.
int run_check_suite(std::uint64_t seed, std::ostream& log);

}  // namespace mlr
