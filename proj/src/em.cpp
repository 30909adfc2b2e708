#include "mlr/em.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mlr/rng.hpp"
#include "mlr/util.hpp"

namespace mlr {
namespace {

constexpr double kSigma2Floor = 1e-8;

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

// Weighted mean of squared residuals: (1/n) sum [ w (y-m)^2 + (1-w)(y+m)^2 ]
// = mean(y^2 + m^2) - 2 mean((2w-1) y m).
double weighted_residual(const Eigen::ArrayXd& w, const Eigen::ArrayXd& y,
                         const Eigen::ArrayXd& m) {
  return (y.square() + m.square()).mean() -
         2.0 * ((2.0 * w - 1.0) * y * m).mean();
}

TraceRow make_trace_row(int iter, const EMState& st, const Dataset& data,
                        const EvalTarget* target, double wall_ms) {
  TraceRow row;
  row.iter = iter;
  row.objective = q_function(st, st, data);
  row.data_term = std::nan("");
  row.model_term = std::nan("");
  row.reg_term = std::nan("");
  row.grad_beta_norm = gem_grads(st, st, data).d_beta.norm();
  row.rel_err = target ? relative_error(st.beta, target->beta_star, true)
                       : std::nan("");
  row.nll = nll_symmetric(data, st.beta, st.sigma2);
  row.wall_ms = wall_ms;
  return row;
}

}  // namespace

EMState init_em_state(Eigen::Index d, std::uint64_t seed, double init_scale) {
  if (d < 1) {
    throw std::invalid_argument("init_em_state: need d >= 1");
  }
  double scale = init_scale > 0.0 ? init_scale : 1.0 / std::sqrt(double(d));
  CounterRng rng(seed, Stream::Init);
  EMState st;
  st.beta.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    st.beta[j] = scale * rng.normal(j);
  }
  st.sigma2 = 1.0;
  return st;
}

Eigen::VectorXd e_weights_rows(const EMState& st, const Eigen::MatrixXd& xs,
                               const Eigen::VectorXd& ys,
                               Eigen::Index row_start,
                               Eigen::Index row_count) {
  if (!(st.sigma2 > 0.0)) {
    throw std::invalid_argument("e_weights: sigma2 must be positive");
  }
  Eigen::ArrayXd m = (xs.middleRows(row_start, row_count) * st.beta).array();
  Eigen::ArrayXd y = ys.segment(row_start, row_count).array();
  return (2.0 * y * m / st.sigma2)
      .unaryExpr([](double t) { return logistic(t); })
      .matrix();
}

Eigen::VectorXd e_weights(const EMState& st, const Dataset& data) {
  if (st.beta.size() != data.d()) {
    throw std::invalid_argument("e_weights: dimension mismatch");
  }
  return e_weights_rows(st, data.xs, data.ys, 0, data.n());
}

double q_function(const EMState& next, const EMState& old,
                  const Dataset& data) {
  if (!(next.sigma2 > 0.0)) {
    throw std::invalid_argument("q_function: sigma2 must be positive");
  }
  Eigen::ArrayXd w = e_weights(old, data).array();
  Eigen::ArrayXd y = data.ys.array();
  Eigen::ArrayXd m = (data.xs * next.beta).array();
  return -0.5 * std::log(next.sigma2) -
         weighted_residual(w, y, m) / (2.0 * next.sigma2);
}

EMState m_step(const EMState& old, const Dataset& data,
               const Eigen::MatrixXd* sigma_x_known) {
  Eigen::Index n = data.n();
  Eigen::Index d = data.d();
  if (n < 1) {
    throw std::invalid_argument("m_step: empty dataset");
  }
  Eigen::ArrayXd w = e_weights(old, data).array();
  Eigen::ArrayXd y = data.ys.array();
  Eigen::VectorXd rhs =
      data.xs.transpose() * ((2.0 * w - 1.0) * y).matrix() /
      static_cast<double>(n);

  Eigen::MatrixXd sigma_x;
  if (sigma_x_known) {
    if (sigma_x_known->rows() != d || sigma_x_known->cols() != d) {
      throw std::invalid_argument("m_step: Sigma_x shape mismatch");
    }
    sigma_x = *sigma_x_known;
  } else {
    sigma_x = data.xs.transpose() * data.xs / static_cast<double>(n);
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_x);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw std::runtime_error("m_step: Sigma_x is not positive definite");
  }

  EMState next;
  next.beta = ldlt.solve(rhs);
  Eigen::ArrayXd m = (data.xs * next.beta).array();
  next.sigma2 = std::max(weighted_residual(w, y, m), kSigma2Floor);
  return next;
}

GEMGrads gem_grads_rows(const EMState& next, const EMState& old,
                        const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                        Eigen::Index row_start, Eigen::Index row_count) {
  if (!(next.sigma2 > 0.0)) {
    throw std::invalid_argument("gem_grads: sigma2 must be positive");
  }
  double n = static_cast<double>(row_count);
  Eigen::ArrayXd w =
      e_weights_rows(old, xs, ys, row_start, row_count).array();
  auto X = xs.middleRows(row_start, row_count);
  Eigen::ArrayXd y = ys.segment(row_start, row_count).array();
  Eigen::ArrayXd m = (X * next.beta).array();

  GEMGrads g;
  // w (y - m) + (w - 1)(y + m) = (2w - 1) y - m.
  g.d_beta = X.transpose() * ((2.0 * w - 1.0) * y - m).matrix() /
             (next.sigma2 * n);
  g.d_sigma2 = weighted_residual(w, y, m) / (2.0 * next.sigma2 * next.sigma2) -
               1.0 / (2.0 * next.sigma2);
  return g;
}

GEMGrads gem_grads(const EMState& next, const EMState& old,
                   const Dataset& data) {
  if (next.beta.size() != data.d() || old.beta.size() != data.d()) {
    throw std::invalid_argument("gem_grads: dimension mismatch");
  }
  return gem_grads_rows(next, old, data.xs, data.ys, 0, data.n());
}

EMRun run_em(const Dataset& data, const EMState& init, int iters,
             const EvalTarget* eval, const Eigen::MatrixXd* sigma_x_known) {
  if (iters < 0) {
    throw std::invalid_argument("run_em: iters must be nonnegative");
  }
  if (sigma_x_known && (sigma_x_known->rows() != data.d() ||
                        sigma_x_known->cols() != data.d())) {
    throw std::invalid_argument("run_em: Sigma_x shape mismatch");
  }
  auto t0 = std::chrono::steady_clock::now();

  // The normal-equation matrix is iteration independent; factor it once.
  Eigen::MatrixXd sigma_x =
      sigma_x_known
          ? *sigma_x_known
          : Eigen::MatrixXd(data.xs.transpose() * data.xs /
                            static_cast<double>(data.n()));
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_x);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw std::runtime_error("run_em: Sigma_x is not positive definite");
  }

  EMRun run;
  run.trace.reserve(iters + 1);
  EMState state = init;
  Eigen::ArrayXd y = data.ys.array();
  for (int t = 0; t < iters; ++t) {
    run.trace.push_back(make_trace_row(t, state, data, eval, elapsed_ms(t0)));
    Eigen::ArrayXd w = e_weights(state, data).array();
    Eigen::VectorXd rhs =
        data.xs.transpose() * ((2.0 * w - 1.0) * y).matrix() /
        static_cast<double>(data.n());
    state.beta = ldlt.solve(rhs);
    Eigen::ArrayXd m = (data.xs * state.beta).array();
    state.sigma2 = std::max(weighted_residual(w, y, m), kSigma2Floor);
  }
  run.trace.push_back(
      make_trace_row(iters, state, data, eval, elapsed_ms(t0)));
  run.state = std::move(state);
  return run;
}

EMRun run_gem(const Dataset& data, const EMState& init, const GEMConfig& cfg,
              const EvalTarget* eval) {
  if (!(cfg.alpha > 0.0) || cfg.iters < 0) {
    throw std::invalid_argument("run_gem: need alpha > 0, iters >= 0");
  }
  auto t0 = std::chrono::steady_clock::now();

  EMRun run;
  run.trace.reserve(cfg.iters + 1);
  EMState state = init;
  for (int t = 0; t < cfg.iters; ++t) {
    run.trace.push_back(make_trace_row(t, state, data, eval, elapsed_ms(t0)));
    GEMGrads g = gem_grads(state, state, data);
    if (!g.d_beta.allFinite() || !std::isfinite(g.d_sigma2)) {
      throw std::runtime_error("run_gem: non-finite gradient at iteration " +
                               std::to_string(t));
    }
    state.beta += cfg.alpha * g.d_beta;
    state.sigma2 =
        std::max(state.sigma2 + cfg.alpha * g.d_sigma2, cfg.sigma2_floor);
  }
  run.trace.push_back(
      make_trace_row(cfg.iters, state, data, eval, elapsed_ms(t0)));
  run.state = std::move(state);
  return run;
}

}  // namespace mlr
