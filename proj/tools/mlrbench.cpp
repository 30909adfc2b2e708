// mlrbench: seeded mixed-linear-regression experiments from the command
// line. Subcommands: generate, run, sweep, reproduce, check. Exit codes:
// 0 success, 1 bad configuration, 2 solver failure, 3 check-suite or
// reproduce-band failure.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mlr/bench.hpp"
#include "mlr/io.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> algorithm;
  std::optional<double> snr;
  std::optional<long long> n;
  std::optional<long long> agents;
  std::optional<double> lambda;
  std::optional<double> alpha;
  std::optional<int> iters;
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config file");
  cmd->add_option("--seed", o.seed, "master seed (data, init, noise)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--algorithm", o.algorithm,
                  "wmlr | em | gem | f-wmlr | f-em | f-gem");
  cmd->add_option("--snr", o.snr, "target norm of the true regressor");
  cmd->add_option("--n", o.n, "sample count");
  cmd->add_option("--agents", o.agents, "federated agent count");
  cmd->add_option("--lambda", o.lambda, "critic regularization weight");
  cmd->add_option("--alpha", o.alpha, "ascent step size (em family)");
  cmd->add_option("--iters", o.iters,
                  "iteration budget (communication rounds when federated)");
}

mlr::ExperimentConfig build_config(const Overrides& o) {
  mlr::ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    cfg = mlr::load_config(o.config_path);
  }
  if (o.algorithm) {
    cfg.algorithm = *o.algorithm;
    cfg.scenario = mlr::is_federated_algorithm(*o.algorithm) ? "federated"
                                                             : "centralized";
  }
  if (o.seed) {
    cfg.seed = *o.seed;
  }
  if (o.out) {
    cfg.output_dir = *o.out;
  }
  if (o.snr) {
    cfg.gen.snr = *o.snr;
  }
  if (o.n) {
    cfg.gen.n = *o.n;
  }
  if (o.agents) {
    cfg.fed.agents = *o.agents;
  }
  if (o.lambda) {
    cfg.solver.lambda = *o.lambda;
  }
  if (o.alpha) {
    cfg.solver.alpha = *o.alpha;
    if (cfg.algorithm == "f-em") {
      cfg.fed.fem_alpha = *o.alpha;
    }
  }
  if (o.iters) {
    cfg.solver.iters = *o.iters;
    if (cfg.scenario == "federated") {
      cfg.fed.rounds = *o.iters;
    }
  }
  return cfg;
}

int do_generate(const mlr::ExperimentConfig& cfg) {
  mlr::GenConfig gen;
  gen.n = static_cast<Eigen::Index>(cfg.gen.n);
  gen.d = static_cast<Eigen::Index>(cfg.gen.d);
  gen.snr = cfg.gen.snr;
  gen.sigma2 = cfg.gen.sigma2;
  gen.x_law.norm_bound = cfg.gen.norm_bound;
  gen.seed = cfg.seed;
  Eigen::VectorXd beta_star =
      mlr::beta_star_from_shell(gen.d, gen.snr, cfg.seed);
  mlr::MLRParams params = mlr::symmetric_params(beta_star, gen.sigma2);

  std::filesystem::path dir(cfg.output_dir);
  if (cfg.scenario == "federated") {
    Eigen::Index agents = static_cast<Eigen::Index>(cfg.fed.agents);
    mlr::FederatedDataset fed = mlr::generate_federated(
        gen, params, agents, gen.n / agents,
        cfg.fed.assignment == "per-agent" ? mlr::FedAssignment::PerAgent
                                          : mlr::FedAssignment::PerSample);
    mlr::write_dataset_csv((dir / "dataset.csv").string(), fed.data);
    mlr::write_agents_csv((dir / "agents.csv").string(), fed.agents);
  } else {
    mlr::Dataset data = mlr::generate_dataset(gen, params);
    mlr::write_dataset_csv((dir / "dataset.csv").string(), data);
  }
  std::string truth;
  for (Eigen::Index j = 0; j < beta_star.size(); ++j) {
    truth += mlr::format_double(beta_star(j));
    truth += '\n';
  }
  mlr::write_text_atomic((dir / "betastar.csv").string(), truth);
  mlr::write_text_atomic((dir / "config.json").string(),
                         mlr::emit_config(cfg));
  std::cout << "wrote dataset under " << dir.string() << "\n";
  return 0;
}

int do_run(const mlr::ExperimentConfig& cfg) {
  mlr::RunSummary s = mlr::run_experiment(cfg);
  std::cout << "final_rel_err=" << mlr::format_double(s.final_rel_err)
            << " final_nll=" << mlr::format_double(s.final_nll)
            << " convergence_round=" << s.convergence_round
            << (s.dnc ? " (did not converge)" : "") << "\n"
            << "summary: "
            << (std::filesystem::path(cfg.output_dir) / "summary.json")
                   .string()
            << "\n";
  return 0;
}

int do_sweep(const mlr::ExperimentConfig& cfg, const mlr::SweepSpec& spec) {
  mlr::SweepResult result = mlr::sweep(cfg, spec);
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const mlr::SweepPoint& p = result.points[i];
    std::cout << spec.parameter << "=" << mlr::format_double(p.value);
    if (p.failed) {
      std::cout << "  failed: " << p.error;
    } else {
      std::cout << "  nll=" << mlr::format_double(p.final_nll)
                << "  rel_err=" << mlr::format_double(p.final_rel_err)
                << "  conv_round=" << p.convergence_round;
    }
    if (static_cast<int>(i) == result.best_index) {
      std::cout << "  <- selected";
    }
    std::cout << "\n";
  }
  std::cout << "sweep csv: "
            << (std::filesystem::path(cfg.output_dir) / "sweep.csv").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seeded benchmark harness for mixed linear regression solvers"};
  app.require_subcommand(1);

  Overrides gen_o;
  CLI::App* cmd_generate =
      app.add_subcommand("generate", "write a synthetic dataset and truth");
  add_common_flags(cmd_generate, gen_o);

  Overrides run_o;
  CLI::App* cmd_run = app.add_subcommand(
      "run", "run one experiment; writes trace/rounds CSV and summary JSON");
  add_common_flags(cmd_run, run_o);

  Overrides sweep_o;
  std::optional<std::string> sweep_param;
  std::optional<int> sweep_points;
  std::optional<double> sweep_lo;
  std::optional<double> sweep_hi;
  std::optional<std::string> sweep_select;
  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "evaluate a log-spaced hyperparameter grid on fixed data");
  add_common_flags(cmd_sweep, sweep_o);
  cmd_sweep->add_option("--param", sweep_param, "lambda | alpha");
  cmd_sweep->add_option("--points", sweep_points, "grid size");
  cmd_sweep->add_option("--lo", sweep_lo, "grid lower endpoint");
  cmd_sweep->add_option("--hi", sweep_hi, "grid upper endpoint");
  cmd_sweep->add_option("--select", sweep_select,
                        "min_final_nll | fastest_convergence");

  std::string repro_table;
  std::string repro_scale = "desk";
  std::string repro_out;
  std::uint64_t repro_seed = 1;
  CLI::App* cmd_repro = app.add_subcommand(
      "reproduce", "run a preset experiment table and check its bands");
  cmd_repro->add_option("table", repro_table, "table1 | table2 | table4")
      ->required();
  cmd_repro->add_option("--scale", repro_scale, "desk | paper");
  cmd_repro->add_option("--out", repro_out, "report directory");
  cmd_repro->add_option("--seed", repro_seed, "master seed");

  std::uint64_t check_seed = 1;
  CLI::App* cmd_check =
      app.add_subcommand("check", "run the fast invariant suite");
  cmd_check->add_option("--seed", check_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  // Configuration phase: anything thrown here is a validation failure.
  mlr::ExperimentConfig cfg;
  mlr::SweepSpec spec;
  try {
    if (cmd_generate->parsed()) {
      cfg = build_config(gen_o);
      mlr::validate(cfg);
    } else if (cmd_run->parsed()) {
      cfg = build_config(run_o);
      mlr::validate(cfg);
    } else if (cmd_sweep->parsed()) {
      cfg = build_config(sweep_o);
      mlr::validate(cfg);
      if (!sweep_o.config_path.empty()) {
        spec = mlr::parse_sweep(mlr::read_text(sweep_o.config_path));
      }
      if (sweep_param) {
        spec.parameter = *sweep_param;
      }
      if (sweep_points) {
        spec.count = *sweep_points;
      }
      if (sweep_lo) {
        spec.lo = *sweep_lo;
      }
      if (sweep_hi) {
        spec.hi = *sweep_hi;
      }
      if (sweep_select) {
        spec.selection = *sweep_select;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  // Execution phase: failures here are solver/runtime errors.
  try {
    if (cmd_generate->parsed()) {
      return do_generate(cfg);
    }
    if (cmd_run->parsed()) {
      return do_run(cfg);
    }
    if (cmd_sweep->parsed()) {
      return do_sweep(cfg, spec);
    }
    if (cmd_repro->parsed()) {
      if (repro_out.empty()) {
        repro_out = "out/" + repro_table + "-" + repro_scale;
      }
      mlr::ReproduceReport report =
          mlr::reproduce(repro_table, repro_scale, repro_out, repro_seed);
      std::cout << mlr::render_report(report);
      std::cout << "report: " << repro_out << "/report.csv\n";
      return report.all_pass ? 0 : 3;
    }
    if (cmd_check->parsed()) {
      return mlr::run_check_suite(check_seed, std::cout) == 0 ? 0 : 3;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
