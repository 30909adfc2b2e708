#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mlr/em.hpp"
#include "mlr/model.hpp"
#include "mlr/trace.hpp"
#include "mlr/wmlr.hpp"

namespace mlr {

struct FederatedConfig {
  double participation = 1.0;  // fraction of agents active per round, (0,1]
  int local_steps = 1;         // GDA steps per round (F-WMLR)
  int fem_inner_max = 50;      // inner ascent round cap per outer EM step
  double fem_tol = 0.01;       // inner exit: ||average beta gradient|| <= tol
  double fem_alpha = 0.08;     // inner ascent step size (F-EM)
  int rounds = 200;            // solver round budget (excludes the reference-
                               // vector rounds, which are logged additionally)
  std::uint64_t seed = 0;      // participation sampling
};

// One communication round. broadcasts/uploads count parameter transmissions
// this round; scalars_sent = (broadcasts + uploads) * parameter length.
// Metrics describe the averaged model on the pooled data.
struct RoundLog {
  int round = 0;
  long long broadcasts = 0;
  long long uploads = 0;
  long long scalars_sent = 0;
  double rel_err = 0.0;
  double nll = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct FedWMLRRun {
  WMLRState state;
  std::vector<RoundLog> rounds;
};

// Algorithm per round: broadcast (beta, gamma1, gamma2); each participating
// agent runs local_steps GDA steps on its local objective (own data term,
// own model-noise rows, full regularizer); the server averages returned
// parameters uniformly over participants, in agent-id order. Setup rounds
// precede GDA and are logged like any other round: one scale round that
// pools per-agent response sums of squares (the same standardization the
// centralized driver applies, see response_scale2), then the federated
// power iteration for the reference vector, one round per step. beta in the
// returned state and the per-round rel_err/nll are in response units.
FedWMLRRun run_f_wmlr(const FederatedDataset& fed, const WMLRConfig& cfg,
                      const FederatedConfig& fcfg,
                      const EvalTarget* eval = nullptr);

struct FedEMRun {
  EMState state;
  std::vector<RoundLog> rounds;
};

// Outer loop freezes the weight state (beta', sigma2'); the inner loop (at
// most fem_inner_max rounds) ascends Q(. | beta', sigma2') by fem_alpha
// steps with server averaging each round, exiting early once the averaged
// beta-gradient norm drops to fem_tol. sigma2 is floored after every round.
FedEMRun run_f_em(const FederatedDataset& fed, const EMState& init,
                  const FederatedConfig& fcfg,
                  const EvalTarget* eval = nullptr);

// One local ascent step per agent per round, uniform averaging, floor
// projection on sigma2.
FedEMRun run_f_gem(const FederatedDataset& fed, const EMState& init,
                   const GEMConfig& cfg, const FederatedConfig& fcfg,
                   const EvalTarget* eval = nullptr);

// Smallest t0 such that err[k] <= 1.05 * err.back() for every k >= t0.
int convergence_round(const std::vector<double>& rel_errs);

// Final relative error above the threshold, or non-finite.
bool did_not_converge(double final_rel_err, double threshold = 0.5);

}  // namespace mlr
