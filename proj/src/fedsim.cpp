#include "mlr/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mlr/rng.hpp"

namespace mlr {
namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

void validate_fed(const FederatedDataset& fed, const FederatedConfig& fcfg) {
  if (fed.agents.empty()) {
    throw std::invalid_argument("federated run: no agents");
  }
  for (const AgentRange& a : fed.agents) {
    if (a.row_count < 1 || a.row_start < 0 ||
        a.row_start + a.row_count > fed.data.n()) {
      throw std::invalid_argument("federated run: bad agent row range");
    }
  }
  if (!(fcfg.participation > 0.0 && fcfg.participation <= 1.0)) {
    throw std::invalid_argument("FederatedConfig: participation in (0,1]");
  }
  if (fcfg.local_steps < 1 || fcfg.fem_inner_max < 1 || fcfg.rounds < 0) {
    throw std::invalid_argument("FederatedConfig: bad loop bounds");
  }
}

// Sorted participant ids. Full participation never consumes randomness, so
// participation = 1.0 is bitwise the plain path.
std::vector<Eigen::Index> select_participants(Eigen::Index n_agents,
                                              const FederatedConfig& fcfg,
                                              int round) {
  auto count = static_cast<Eigen::Index>(
      std::ceil(fcfg.participation * static_cast<double>(n_agents)));
  count = std::clamp<Eigen::Index>(count, 1, n_agents);
  std::vector<Eigen::Index> ids(n_agents);
  std::iota(ids.begin(), ids.end(), Eigen::Index{0});
  if (count == n_agents) {
    return ids;
  }
  CounterRng rng(fcfg.seed, Stream::Participation);
  std::uint64_t base =
      static_cast<std::uint64_t>(round) * static_cast<std::uint64_t>(n_agents);
  for (Eigen::Index j = 0; j < count; ++j) {
    std::uint64_t r = rng.bits(base + j) %
                      static_cast<std::uint64_t>(n_agents - j);
    std::swap(ids[j], ids[j + static_cast<Eigen::Index>(r)]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Fixed-shape reduction tree keyed by position, so the average is identical
// no matter in which order agent results were produced.
Eigen::VectorXd pairwise_sum(const std::vector<Eigen::VectorXd>& v,
                             std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) {
    return v[lo];
  }
  std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

Eigen::VectorXd pairwise_mean(const std::vector<Eigen::VectorXd>& v) {
  return pairwise_sum(v, 0, v.size()) / static_cast<double>(v.size());
}

double pairwise_sum(const std::vector<double>& v, std::size_t lo,
                    std::size_t hi) {
  if (hi - lo == 1) {
    return v[lo];
  }
  std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

double pairwise_mean(const std::vector<double>& v) {
  return pairwise_sum(v, 0, v.size()) / static_cast<double>(v.size());
}

}  // namespace

FedWMLRRun run_f_wmlr(const FederatedDataset& fed, const WMLRConfig& cfg,
                      const FederatedConfig& fcfg, const EvalTarget* eval) {
  validate_fed(fed, fcfg);
  auto t0 = std::chrono::steady_clock::now();
  const Dataset& pooled = fed.data;
  Eigen::Index n_agents = fed.n_agents();
  Eigen::Index d = pooled.d();

  FedWMLRRun run;
  WMLRState state =
      init_wmlr_state(pooled, cfg, Eigen::VectorXd::Zero(d));

  // beta is held in standardized units between rounds; reporting maps it
  // back to response units.
  double sy = 1.0;
  auto log_round = [&](double grad_norm) {
    Eigen::VectorXd beta = sy * state.beta;
    RoundLog log;
    log.round = static_cast<int>(run.rounds.size());
    log.rel_err = eval ? relative_error(beta, eval->beta_star, true)
                       : std::nan("");
    double s2 = cfg.sigma_mode == SigmaMode::Known
                    ? cfg.sigma2
                    : estimate_sigma2(pooled, beta);
    log.nll = nll_symmetric(pooled, beta, s2);
    log.grad_norm = grad_norm;
    log.wall_ms = elapsed_ms(t0);
    return log;
  };

  // Scale round: agents upload local response sums of squares, the server
  // fixes the standardization every later round uses. One scalar each way.
  std::vector<double> local_ss(n_agents);
  for (Eigen::Index m = 0; m < n_agents; ++m) {
    const AgentRange& a = fed.agents[m];
    local_ss[m] = pooled.ys.segment(a.row_start, a.row_count).squaredNorm();
  }
  double s2y = response_scale2(pairwise_sum(local_ss, 0, local_ss.size()),
                               pooled.n());
  sy = std::sqrt(s2y);
  Eigen::VectorXd ys = pooled.ys / sy;
  WMLRConfig scfg = cfg;
  scfg.sigma2 = cfg.sigma2 / s2y;
  state.beta /= sy;
  {
    RoundLog log = log_round(std::nan(""));
    log.broadcasts = n_agents;
    log.uploads = n_agents;
    log.scalars_sent = 2ll * n_agents;
    run.rounds.push_back(log);
  }

  // Reference vector by federated power iteration: agents return local
  // second-moment products, the server averages them. Every step is one
  // broadcast/upload of a d-vector per agent.
  state.gamma_ref = power_iteration(
      [&](const Eigen::VectorXd& v) {
        std::vector<Eigen::VectorXd> products(n_agents);
        for (Eigen::Index m = 0; m < n_agents; ++m) {
          const AgentRange& a = fed.agents[m];
          products[m] = second_moment_product_rows(pooled.xs, ys, a.row_start,
                                                   a.row_count, v);
        }
        return pairwise_mean(products);
      },
      d, 200, 1e-10,
      [&](int, const Eigen::VectorXd&) {
        RoundLog log = log_round(std::nan(""));
        log.broadcasts = n_agents;
        log.uploads = n_agents;
        log.scalars_sent = 2ll * n_agents * d;
        run.rounds.push_back(log);
      });

  // GDA rounds. The scratch state shares the immutable pieces (noise, seed,
  // reference vector); only the optimization variables are per-agent.
  WMLRState scratch = state;
  std::vector<Eigen::VectorXd> betas, g1s, g2s;
  for (int r = 0; r < fcfg.rounds; ++r) {
    std::vector<Eigen::Index> active = select_participants(n_agents, fcfg, r);
    betas.clear();
    g1s.clear();
    g2s.clear();
    for (Eigen::Index m : active) {
      const AgentRange& a = fed.agents[m];
      scratch.beta = state.beta;
      scratch.gamma1 = state.gamma1;
      scratch.gamma2 = state.gamma2;
      scratch.iter = state.iter;
      for (int s = 0; s < fcfg.local_steps; ++s) {
        auto [next, local_eval] = gda_step_rows(
            scratch, pooled.xs, ys, a.row_start, a.row_count, scfg);
        scratch.beta = std::move(next.beta);
        scratch.gamma1 = std::move(next.gamma1);
        scratch.gamma2 = std::move(next.gamma2);
        scratch.iter = next.iter;
      }
      betas.push_back(scratch.beta);
      g1s.push_back(scratch.gamma1);
      g2s.push_back(scratch.gamma2);
    }
    state.beta = pairwise_mean(betas);
    state.gamma1 = pairwise_mean(g1s);
    state.gamma2 = pairwise_mean(g2s);
    state.iter += fcfg.local_steps;
    if (!state.beta.allFinite() || !state.gamma1.allFinite() ||
        !state.gamma2.allFinite()) {
      throw std::runtime_error("run_f_wmlr: non-finite averaged parameters");
    }

    ObjectiveEvalSym pooled_eval =
        objective_sym_rows(pooled.xs, ys, 0, pooled.n(), state, scfg);
    RoundLog log = log_round(pooled_eval.grad_beta.norm());
    auto active_count = static_cast<long long>(active.size());
    log.broadcasts = active_count;
    log.uploads = active_count;
    log.scalars_sent = 2ll * active_count * 3ll * d;
    run.rounds.push_back(log);
  }
  state.beta *= sy;
  run.state = std::move(state);
  return run;
}

FedEMRun run_f_em(const FederatedDataset& fed, const EMState& init,
                  const FederatedConfig& fcfg, const EvalTarget* eval) {
  validate_fed(fed, fcfg);
  if (!(fcfg.fem_alpha > 0.0) || !(fcfg.fem_tol >= 0.0)) {
    throw std::invalid_argument("run_f_em: need fem_alpha > 0, fem_tol >= 0");
  }
  auto t0 = std::chrono::steady_clock::now();
  const Dataset& pooled = fed.data;
  Eigen::Index n_agents = fed.n_agents();
  Eigen::Index d = pooled.d();

  FedEMRun run;
  run.state = init;
  EMState& state = run.state;

  std::vector<Eigen::VectorXd> betas, grads;
  std::vector<double> sigmas;
  int used = 0;
  while (used < fcfg.rounds) {
    const EMState frozen = state;  // weight state for this outer step
    for (int inner = 0; inner < fcfg.fem_inner_max && used < fcfg.rounds;
         ++inner) {
      std::vector<Eigen::Index> active =
          select_participants(n_agents, fcfg, used);
      betas.clear();
      grads.clear();
      sigmas.clear();
      for (Eigen::Index m : active) {
        const AgentRange& a = fed.agents[m];
        GEMGrads g = gem_grads_rows(state, frozen, pooled.xs, pooled.ys,
                                    a.row_start, a.row_count);
        betas.push_back(state.beta + fcfg.fem_alpha * g.d_beta);
        sigmas.push_back(state.sigma2 + fcfg.fem_alpha * g.d_sigma2);
        grads.push_back(std::move(g.d_beta));
      }
      state.beta = pairwise_mean(betas);
      state.sigma2 = std::max(pairwise_mean(sigmas), 1e-8);
      double avg_grad_norm = pairwise_mean(grads).norm();
      if (!state.beta.allFinite() || !std::isfinite(state.sigma2)) {
        throw std::runtime_error("run_f_em: non-finite averaged parameters");
      }

      RoundLog log;
      log.round = static_cast<int>(run.rounds.size());
      log.rel_err = eval ? relative_error(state.beta, eval->beta_star, true)
                         : std::nan("");
      log.nll = nll_symmetric(pooled, state.beta, state.sigma2);
      log.grad_norm = avg_grad_norm;
      log.wall_ms = elapsed_ms(t0);
      auto active_count = static_cast<long long>(active.size());
      log.broadcasts = active_count;
      log.uploads = active_count;
      log.scalars_sent = 2ll * active_count * (d + 1);
      run.rounds.push_back(log);
      ++used;

      if (avg_grad_norm <= fcfg.fem_tol) {
        break;
      }
    }
  }
  return run;
}

FedEMRun run_f_gem(const FederatedDataset& fed, const EMState& init,
                   const GEMConfig& cfg, const FederatedConfig& fcfg,
                   const EvalTarget* eval) {
  validate_fed(fed, fcfg);
  if (!(cfg.alpha > 0.0)) {
    throw std::invalid_argument("run_f_gem: alpha must be positive");
  }
  auto t0 = std::chrono::steady_clock::now();
  const Dataset& pooled = fed.data;
  Eigen::Index n_agents = fed.n_agents();
  Eigen::Index d = pooled.d();

  FedEMRun run;
  run.state = init;
  EMState& state = run.state;

  std::vector<Eigen::VectorXd> betas;
  std::vector<double> sigmas;
  for (int r = 0; r < fcfg.rounds; ++r) {
    std::vector<Eigen::Index> active = select_participants(n_agents, fcfg, r);
    betas.clear();
    sigmas.clear();
    for (Eigen::Index m : active) {
      const AgentRange& a = fed.agents[m];
      GEMGrads g = gem_grads_rows(state, state, pooled.xs, pooled.ys,
                                  a.row_start, a.row_count);
      betas.push_back(state.beta + cfg.alpha * g.d_beta);
      sigmas.push_back(state.sigma2 + cfg.alpha * g.d_sigma2);
    }
    state.beta = pairwise_mean(betas);
    state.sigma2 = std::max(pairwise_mean(sigmas), cfg.sigma2_floor);
    if (!state.beta.allFinite() || !std::isfinite(state.sigma2)) {
      throw std::runtime_error("run_f_gem: non-finite averaged parameters");
    }

    RoundLog log;
    log.round = static_cast<int>(run.rounds.size());
    log.rel_err = eval ? relative_error(state.beta, eval->beta_star, true)
                       : std::nan("");
    log.nll = nll_symmetric(pooled, state.beta, state.sigma2);
    log.grad_norm = gem_grads(state, state, pooled).d_beta.norm();
    log.wall_ms = elapsed_ms(t0);
    auto active_count = static_cast<long long>(active.size());
    log.broadcasts = active_count;
    log.uploads = active_count;
    log.scalars_sent = 2ll * active_count * (d + 1);
    run.rounds.push_back(log);
  }
  return run;
}

int convergence_round(const std::vector<double>& rel_errs) {
  if (rel_errs.empty()) {
    throw std::invalid_argument("convergence_round: empty sequence");
  }
  double bound = 1.05 * rel_errs.back();
  int t0 = 0;
  for (int k = static_cast<int>(rel_errs.size()) - 1; k >= 0; --k) {
    if (!(rel_errs[k] <= bound)) {
      t0 = k + 1;
      break;
    }
  }
  return t0;
}

bool did_not_converge(double final_rel_err, double threshold) {
  return !(std::isfinite(final_rel_err) && final_rel_err <= threshold);
}

}  // namespace mlr
