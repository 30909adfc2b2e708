#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "mlr/model.hpp"
#include "mlr/trace.hpp"

namespace mlr {

struct EMState {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
};

struct GEMConfig {
  double alpha = 0.5;
  int iters = 100;
  double sigma2_floor = 1e-8;
};

// beta ~ N(0, scale^2 I) from the Init stream, sigma2 = 1.
EMState init_em_state(Eigen::Index d, std::uint64_t seed,
                      double init_scale = 0.0);

// Posterior weight of the +beta component per sample:
// logistic(2 y_i beta' x_i / sigma2).
Eigen::VectorXd e_weights(const EMState& st, const Dataset& data);
Eigen::VectorXd e_weights_rows(const EMState& st, const Eigen::MatrixXd& xs,
                               const Eigen::VectorXd& ys,
                               Eigen::Index row_start, Eigen::Index row_count);

// Expected complete-data log likelihood (up to constants) of `next` under
// weights from `old`:
// -log(s2)/2 - (1/(2 s2 n)) sum [ w (y - b'x)^2 + (1-w)(y + b'x)^2 ].
double q_function(const EMState& next, const EMState& old,
                  const Dataset& data);

// Exact maximizer of q_function given weights from `old`. sigma_x_known
// optionally injects a known covariance; default is the empirical
// second-moment matrix. sigma2 is floored at 1e-8.
EMState m_step(const EMState& old, const Dataset& data,
               const Eigen::MatrixXd* sigma_x_known = nullptr);

struct GEMGrads {
  Eigen::VectorXd d_beta;
  double d_sigma2 = 0.0;
};

// Gradients of q_function(next, old, data) with respect to next.
GEMGrads gem_grads(const EMState& next, const EMState& old,
                   const Dataset& data);
GEMGrads gem_grads_rows(const EMState& next, const EMState& old,
                        const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                        Eigen::Index row_start, Eigen::Index row_count);

struct EMRun {
  EMState state;
  Trace trace;
};

// T exact EM iterations (e_weights + m_step). Trace rows 0..T; the objective
// column carries Q(state | state). sigma_x, when given, replaces the
// empirical second-moment matrix in every M-step (the known-covariance
// setting); it is factored once.
EMRun run_em(const Dataset& data, const EMState& init, int iters,
             const EvalTarget* eval = nullptr,
             const Eigen::MatrixXd* sigma_x = nullptr);

// T single ascent steps on Q: beta += alpha d_beta,
// sigma2 = max(sigma2 + alpha d_sigma2, floor).
EMRun run_gem(const Dataset& data, const EMState& init, const GEMConfig& cfg,
              const EvalTarget* eval = nullptr);

}  // namespace mlr
