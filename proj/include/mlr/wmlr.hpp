#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mlr/critic.hpp"
#include "mlr/model.hpp"
#include "mlr/trace.hpp"

namespace mlr {

enum class SigmaMode { Known, Estimated };
enum class NoiseMode { Fixed, Resample };

struct WMLRConfig {
  double lambda = 0.5;
  double alpha_max = 0.0;  // <= 0 resolves to the heuristic 1 / (2 lambda)
  double alpha_min = 0.0;  // <= 0 resolves to alpha_max / 10
  int iters = 100;
  SigmaMode sigma_mode = SigmaMode::Known;
  double sigma2 = 1.0;  // used when sigma_mode == Known
  NoiseMode noise_mode = NoiseMode::Fixed;
  double init_scale = 0.0;  // <= 0 resolves to 1 / sqrt(d)
  std::uint64_t seed = 0;

  double resolved_alpha_max() const;
  double resolved_alpha_min() const;
};

// Minimax iterate plus the frozen randomness that realizes the model-side
// expectation. noise_unit holds one standard normal per data row; under
// NoiseMode::Fixed the same draws back every iteration (common random
// numbers), which makes the empirical objective deterministic.
struct WMLRState {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma1;
  Eigen::VectorXd gamma2;
  Eigen::VectorXd gamma_ref;
  Eigen::VectorXd noise_unit;
  int iter = 0;
  std::uint64_t seed = 0;
};

struct ObjectiveEvalSym {
  double value = 0.0;
  double data_term = 0.0;
  double model_term = 0.0;
  double reg_term = 0.0;
  Eigen::VectorXd grad_beta;
  Eigen::VectorXd grad_gamma1;
  Eigen::VectorXd grad_gamma2;
};

struct TheoryStepSizes {
  double eta = 0.0;
  double L_smooth = 0.0;
  double kappa = 0.0;
  double alpha_max = 0.0;
  double alpha_min = 0.0;
  bool valid = false;  // requires lambda > 2 eta
};

// Matrix-free power iteration for the top eigenvector of a symmetric PSD
// operator given by `apply`. on_step (optional) observes each normalized
// iterate; used by the federated driver to count communication rounds.
Eigen::VectorXd power_iteration(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
    Eigen::Index d, int iters, double tol,
    const std::function<void(int, const Eigen::VectorXd&)>& on_step = {});

// (1/count) * X_w' ((X_w v) .* y_w^2) over the row window; the power
// iteration step for the second-moment matrix (1/n) sum y_i^2 x_i x_i'.
Eigen::VectorXd second_moment_product_rows(const Eigen::MatrixXd& xs,
                                           const Eigen::VectorXd& ys,
                                           Eigen::Index row_start,
                                           Eigen::Index row_count,
                                           const Eigen::VectorXd& v);

// Top eigenvector of (1/n) sum y_i^2 x_i x_i', sign-fixed so the first
// nonzero coordinate is positive. Errors when all responses are zero.
Eigen::VectorXd reference_vector(const Dataset& data, int iters = 200,
                                 double tol = 1e-10);

// Response scale used by the solver drivers: the second moment
// sum_squares / n rounded to float precision. The rounding makes the value
// independent of whether sum_squares came from one pooled reduction or a
// pairwise tree over per-agent partial sums, so the centralized and
// federated drivers standardize by the same number. Errors when the sum is
// not positive.
double response_scale2(double sum_squares, Eigen::Index n);

// Draws beta, gamma1, gamma2 ~ N(0, scale^2 I) from the Init stream and
// fills the model-noise reservoir from the SolverNoise stream.
WMLRState init_wmlr_state(const Dataset& data, const WMLRConfig& cfg,
                          const Eigen::VectorXd& gamma_ref);

// y'_i = beta' x_i + sigma * eps_i over a row window. Fixed mode reads the
// state's reservoir; Resample derives fresh draws from (seed, iter, row).
Eigen::VectorXd model_samples_rows(const WMLRState& st,
                                   const Eigen::MatrixXd& xs,
                                   Eigen::Index row_start,
                                   Eigen::Index row_count, double sigma2,
                                   NoiseMode mode);
Eigen::VectorXd model_samples(const WMLRState& st, const Dataset& data,
                              double sigma2,
                              NoiseMode mode = NoiseMode::Fixed);

// Empirical minimax objective and all gradients, over a row window of the
// pooled arrays. The window form is what federated agents evaluate; the
// centralized objective is the full-window special case, so both paths run
// literally the same code.
ObjectiveEvalSym objective_sym_rows(const Eigen::MatrixXd& xs,
                                    const Eigen::VectorXd& ys,
                                    Eigen::Index row_start,
                                    Eigen::Index row_count,
                                    const WMLRState& st,
                                    const WMLRConfig& cfg);
ObjectiveEvalSym objective_sym(const Dataset& data, const WMLRState& st,
                               const WMLRConfig& cfg);

// Simultaneous update: beta descends, gammas ascend, all gradients taken at
// the pre-step state. Returns the stepped state and the evaluation it used.
std::pair<WMLRState, ObjectiveEvalSym> gda_step_rows(const WMLRState& st,
                                                     const Eigen::MatrixXd& xs,
                                                     const Eigen::VectorXd& ys,
                                                     Eigen::Index row_start,
                                                     Eigen::Index row_count,
                                                     const WMLRConfig& cfg);
std::pair<WMLRState, ObjectiveEvalSym> gda_step(const WMLRState& st,
                                                const Dataset& data,
                                                const WMLRConfig& cfg);

struct WMLRRun {
  WMLRState state;
  Trace trace;
};

// T simultaneous GDA steps from a fresh (or supplied) state. The trace has
// T+1 rows; row t describes the state after t steps. Internally the driver
// rescales responses to unit second moment (see response_scale2) and runs
// the GDA in those units with sigma2 rescaled to match; beta enters and
// leaves in response units, and the trace's rel_err/nll columns are also in
// response units. Objective columns are in the standardized units the
// iteration actually sees. T = 0 returns the initialization untouched.
// The nll column evaluates at cfg.sigma2 when the noise level is known and
// at estimate_sigma2 otherwise; the plug-in estimate is not used in the
// known mode because its error grows with |beta*|^2 and can cross zero.
WMLRRun run_wmlr(const Dataset& data, const WMLRConfig& cfg,
                 const WMLRState* init = nullptr,
                 const EvalTarget* eval = nullptr);

// Smoothness/step-size certificate: eta = C^2 * mean(y^2) with
// C = max_i ||x_i||, L = lambda + 4 eta (1 + eta/lambda + ||gamma_ref||),
// kappa = L / (lambda - 2 eta), alpha_max = 1/L, alpha_min = 1/(kappa^2 L).
TheoryStepSizes theory_stepsizes(const Dataset& data, double lambda,
                                 const Eigen::VectorXd& gamma_ref);

// General-k variant. Kept sample-at-a-time; the experiment path is the
// symmetric specialization above.
struct WMLRStateK {
  std::vector<Eigen::VectorXd> betas;
  CriticK critic;
  Eigen::VectorXd noise_unit;
  std::vector<int> latents;  // model-side component draws, 1..k per row
  int iter = 0;
  std::uint64_t seed = 0;
};

struct ObjectiveEvalK {
  double value = 0.0;
  double data_term = 0.0;
  double model_term = 0.0;
  double reg_term = 0.0;
  std::vector<Eigen::VectorXd> grad_betas;
  std::vector<Eigen::VectorXd> grad_gammas;
};

WMLRStateK init_wmlr_state_k(const Dataset& data, const WMLRConfig& cfg,
                             const CriticK& critic);
Eigen::VectorXd model_samples_k(const WMLRStateK& st, const Dataset& data,
                                double sigma2,
                                NoiseMode mode = NoiseMode::Fixed);
ObjectiveEvalK objective_k(const Dataset& data, const WMLRStateK& st,
                           const WMLRConfig& cfg);
std::pair<WMLRStateK, ObjectiveEvalK> gda_step_k(const WMLRStateK& st,
                                                 const Dataset& data,
                                                 const WMLRConfig& cfg);

}  // namespace mlr
