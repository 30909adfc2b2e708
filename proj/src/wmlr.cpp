#include "mlr/wmlr.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mlr/rng.hpp"
#include "mlr/util.hpp"

namespace mlr {
namespace {

void validate_config(const WMLRConfig& cfg) {
  if (!(cfg.lambda > 0.0)) {
    throw std::invalid_argument("WMLRConfig: lambda must be positive");
  }
  if (cfg.iters < 0) {
    throw std::invalid_argument("WMLRConfig: iters must be nonnegative");
  }
  if (cfg.sigma_mode == SigmaMode::Known && !(cfg.sigma2 > 0.0)) {
    throw std::invalid_argument("WMLRConfig: known sigma2 must be positive");
  }
  if (!(cfg.resolved_alpha_max() > 0.0) || !(cfg.resolved_alpha_min() > 0.0)) {
    throw std::invalid_argument("WMLRConfig: step sizes must be positive");
  }
}

double window_sigma2(const Eigen::VectorXd& ys, Eigen::Index row_start,
                     Eigen::Index row_count, const Eigen::VectorXd& beta,
                     const WMLRConfig& cfg) {
  if (cfg.sigma_mode == SigmaMode::Known) {
    return cfg.sigma2;
  }
  constexpr double floor = 1e-8;
  double v = ys.segment(row_start, row_count).squaredNorm() /
                 static_cast<double>(row_count) -
             beta.squaredNorm();
  return v > floor ? v : floor;
}

Eigen::ArrayXd log2cosh_array(const Eigen::ArrayXd& t) {
  return t.unaryExpr([](double v) { return log2cosh(v); });
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

// beta is in response units regardless of the units the eval was taken in.
// With a known noise level the log-likelihood uses it directly; the plug-in
// estimate E[y^2] - |beta|^2 is reserved for the estimated mode because its
// sampling error scales with |beta*|^2 and can push it negative at high
// signal-to-noise ratios.
TraceRow make_trace_row(int iter, const ObjectiveEvalSym& eval,
                        const Eigen::VectorXd& beta, const Dataset& data,
                        const WMLRConfig& cfg, const EvalTarget* target,
                        double wall_ms) {
  TraceRow row;
  row.iter = iter;
  row.objective = eval.value;
  row.data_term = eval.data_term;
  row.model_term = eval.model_term;
  row.reg_term = eval.reg_term;
  row.grad_beta_norm = eval.grad_beta.norm();
  row.rel_err = target ? relative_error(beta, target->beta_star, true)
                       : std::nan("");
  double s2 = cfg.sigma_mode == SigmaMode::Known ? cfg.sigma2
                                                 : estimate_sigma2(data, beta);
  row.nll = nll_symmetric(data, beta, s2);
  row.wall_ms = wall_ms;
  return row;
}

}  // namespace

double WMLRConfig::resolved_alpha_max() const {
  return alpha_max > 0.0 ? alpha_max : 1.0 / (2.0 * lambda);
}

double WMLRConfig::resolved_alpha_min() const {
  return alpha_min > 0.0 ? alpha_min : resolved_alpha_max() / 10.0;
}

Eigen::VectorXd power_iteration(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
    Eigen::Index d, int iters, double tol,
    const std::function<void(int, const Eigen::VectorXd&)>& on_step) {
  if (d < 1 || iters < 1) {
    throw std::invalid_argument("power_iteration: need d >= 1, iters >= 1");
  }
  // Start vector from a fixed stream so the result is a pure function of the
  // operator; retry blocks guard against a start orthogonal to the range.
  CounterRng rng(0, Stream::RefVec);
  constexpr int kAttempts = 4;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Eigen::VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      v[j] = rng.normal(static_cast<std::uint64_t>(attempt) * d + j);
    }
    double nv = v.norm();
    if (nv == 0.0) {
      continue;
    }
    v /= nv;

    bool degenerate = false;
    for (int it = 0; it < iters; ++it) {
      Eigen::VectorXd w = apply(v);
      double nw = w.norm();
      if (nw == 0.0) {
        degenerate = true;
        break;
      }
      Eigen::VectorXd next = w / nw;
      double diff = (next - v).norm();
      v = next;
      if (on_step) {
        on_step(it, v);
      }
      if (diff < tol) {
        break;
      }
    }
    if (degenerate) {
      continue;
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      if (v[j] != 0.0) {
        if (v[j] < 0.0) {
          v = -v;
        }
        break;
      }
    }
    return v;
  }
  throw std::runtime_error("power_iteration: operator annihilated all starts");
}

Eigen::VectorXd second_moment_product_rows(const Eigen::MatrixXd& xs,
                                           const Eigen::VectorXd& ys,
                                           Eigen::Index row_start,
                                           Eigen::Index row_count,
                                           const Eigen::VectorXd& v) {
  auto X = xs.middleRows(row_start, row_count);
  Eigen::VectorXd t = X * v;
  t.array() *= ys.segment(row_start, row_count).array().square();
  return X.transpose() * t / static_cast<double>(row_count);
}

Eigen::VectorXd reference_vector(const Dataset& data, int iters, double tol) {
  if (data.n() < 1) {
    throw std::invalid_argument("reference_vector: empty dataset");
  }
  if (data.ys.squaredNorm() == 0.0) {
    throw std::runtime_error(
        "reference_vector: all responses are zero, moment matrix vanishes");
  }
  return power_iteration(
      [&](const Eigen::VectorXd& v) {
        return second_moment_product_rows(data.xs, data.ys, 0, data.n(), v);
      },
      data.d(), iters, tol);
}

double response_scale2(double sum_squares, Eigen::Index n) {
  if (n < 1) {
    throw std::invalid_argument("response_scale2: need n >= 1");
  }
  double s2 = sum_squares / static_cast<double>(n);
  if (!(s2 > 0.0) || !std::isfinite(s2)) {
    throw std::runtime_error(
        "response_scale2: responses have no positive second moment");
  }
  return static_cast<double>(static_cast<float>(s2));
}

WMLRState init_wmlr_state(const Dataset& data, const WMLRConfig& cfg,
                          const Eigen::VectorXd& gamma_ref) {
  Eigen::Index d = data.d();
  Eigen::Index n = data.n();
  double scale =
      cfg.init_scale > 0.0 ? cfg.init_scale : 1.0 / std::sqrt(double(d));

  CounterRng init_rng(cfg.seed, Stream::Init);
  WMLRState st;
  st.beta.resize(d);
  st.gamma1.resize(d);
  st.gamma2.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    st.beta[j] = scale * init_rng.normal(j);
    st.gamma1[j] = scale * init_rng.normal(d + j);
    st.gamma2[j] = scale * init_rng.normal(2 * d + j);
  }
  st.gamma_ref = gamma_ref;

  CounterRng noise_rng(cfg.seed, Stream::SolverNoise);
  st.noise_unit.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    st.noise_unit[i] = noise_rng.normal(i);
  }
  st.iter = 0;
  st.seed = cfg.seed;
  return st;
}

Eigen::VectorXd model_samples_rows(const WMLRState& st,
                                   const Eigen::MatrixXd& xs,
                                   Eigen::Index row_start,
                                   Eigen::Index row_count, double sigma2,
                                   NoiseMode mode) {
  if (!(sigma2 >= 0.0)) {
    throw std::invalid_argument("model_samples: sigma2 must be nonnegative");
  }
  double sigma = std::sqrt(sigma2);
  Eigen::VectorXd yp = xs.middleRows(row_start, row_count) * st.beta;
  if (mode == NoiseMode::Fixed) {
    yp += sigma * st.noise_unit.segment(row_start, row_count);
  } else {
    CounterRng rng(st.seed, Stream::SolverNoise);
    std::uint64_t base = (static_cast<std::uint64_t>(st.iter) + 1) *
                         static_cast<std::uint64_t>(st.noise_unit.size());
    for (Eigen::Index r = 0; r < row_count; ++r) {
      yp[r] += sigma * rng.normal(base + row_start + r);
    }
  }
  return yp;
}

Eigen::VectorXd model_samples(const WMLRState& st, const Dataset& data,
                              double sigma2, NoiseMode mode) {
  if (st.noise_unit.size() != data.n() || st.beta.size() != data.d()) {
    throw std::invalid_argument("model_samples: state/data shape mismatch");
  }
  return model_samples_rows(st, data.xs, 0, data.n(), sigma2, mode);
}

ObjectiveEvalSym objective_sym_rows(const Eigen::MatrixXd& xs,
                                    const Eigen::VectorXd& ys,
                                    Eigen::Index row_start,
                                    Eigen::Index row_count,
                                    const WMLRState& st,
                                    const WMLRConfig& cfg) {
  if (row_count < 1) {
    throw std::invalid_argument("objective_sym: empty row window");
  }
  double n = static_cast<double>(row_count);
  double sigma2 = window_sigma2(ys, row_start, row_count, st.beta, cfg);
  Eigen::VectorXd yp = model_samples_rows(st, xs, row_start, row_count, sigma2,
                                          cfg.noise_mode);

  auto X = xs.middleRows(row_start, row_count);
  Eigen::ArrayXd y = ys.segment(row_start, row_count).array();
  Eigen::ArrayXd u1 = (X * st.gamma1).array();
  Eigen::ArrayXd u2 = (X * st.gamma2).array();

  Eigen::ArrayXd td1 = y * u1;
  Eigen::ArrayXd td2 = y * u2;
  Eigen::ArrayXd tm1 = yp.array() * u1;
  Eigen::ArrayXd tm2 = yp.array() * u2;

  ObjectiveEvalSym out;
  out.data_term = (log2cosh_array(td1) - log2cosh_array(td2)).mean();
  out.model_term = (log2cosh_array(tm1) - log2cosh_array(tm2)).mean();

  Eigen::ArrayXd thd1 = td1.tanh();
  Eigen::ArrayXd thd2 = td2.tanh();
  Eigen::ArrayXd thm1 = tm1.tanh();
  Eigen::ArrayXd thm2 = tm2.tanh();

  CriticSym critic{st.gamma1, st.gamma2, st.gamma_ref, cfg.lambda};
  RegSymEval reg = regularizer(critic);
  out.reg_term = reg.value;
  out.value = out.data_term - out.model_term - out.reg_term;

  out.grad_gamma1 =
      X.transpose() * (thd1 * y - thm1 * yp.array()).matrix() / n -
      reg.d_gamma1;
  out.grad_gamma2 =
      -(X.transpose() * (thd2 * y - thm2 * yp.array()).matrix()) / n -
      reg.d_gamma2;

  // d psi / dy at the model samples, reparameterized through y' = beta'x + e.
  Eigen::ArrayXd psi_y = thm1 * u1 - thm2 * u2;
  out.grad_beta = -(X.transpose() * psi_y.matrix()) / n;
  return out;
}

ObjectiveEvalSym objective_sym(const Dataset& data, const WMLRState& st,
                               const WMLRConfig& cfg) {
  if (st.noise_unit.size() != data.n() || st.beta.size() != data.d()) {
    throw std::invalid_argument("objective_sym: state/data shape mismatch");
  }
  return objective_sym_rows(data.xs, data.ys, 0, data.n(), st, cfg);
}

std::pair<WMLRState, ObjectiveEvalSym> gda_step_rows(const WMLRState& st,
                                                     const Eigen::MatrixXd& xs,
                                                     const Eigen::VectorXd& ys,
                                                     Eigen::Index row_start,
                                                     Eigen::Index row_count,
                                                     const WMLRConfig& cfg) {
  ObjectiveEvalSym eval =
      objective_sym_rows(xs, ys, row_start, row_count, st, cfg);
  if (!std::isfinite(eval.value) || !eval.grad_beta.allFinite() ||
      !eval.grad_gamma1.allFinite() || !eval.grad_gamma2.allFinite()) {
    throw std::runtime_error("gda_step: non-finite gradient at iteration " +
                             std::to_string(st.iter));
  }
  WMLRState next = st;
  next.beta = st.beta - cfg.resolved_alpha_min() * eval.grad_beta;
  next.gamma1 = st.gamma1 + cfg.resolved_alpha_max() * eval.grad_gamma1;
  next.gamma2 = st.gamma2 + cfg.resolved_alpha_max() * eval.grad_gamma2;
  next.iter = st.iter + 1;
  return {std::move(next), std::move(eval)};
}

std::pair<WMLRState, ObjectiveEvalSym> gda_step(const WMLRState& st,
                                                const Dataset& data,
                                                const WMLRConfig& cfg) {
  if (st.noise_unit.size() != data.n() || st.beta.size() != data.d()) {
    throw std::invalid_argument("gda_step: state/data shape mismatch");
  }
  return gda_step_rows(st, data.xs, data.ys, 0, data.n(), cfg);
}

WMLRRun run_wmlr(const Dataset& data, const WMLRConfig& cfg,
                 const WMLRState* init, const EvalTarget* eval) {
  validate_config(cfg);
  if (data.n() < 1) {
    throw std::invalid_argument("run_wmlr: empty dataset");
  }
  auto t0 = std::chrono::steady_clock::now();

  // The GDA runs on responses standardized to unit second moment, with
  // sigma2 rescaled to match; beta crosses the API boundary in response
  // units. Without this the tanh saturation ties the workable (lambda,
  // step-size) range to the response scale.
  double s2y = response_scale2(data.ys.squaredNorm(), data.n());
  double sy = std::sqrt(s2y);
  Eigen::VectorXd ys = data.ys / sy;
  WMLRConfig scfg = cfg;
  scfg.sigma2 = cfg.sigma2 / s2y;

  WMLRState state;
  if (init) {
    state = *init;
    if (state.noise_unit.size() != data.n() ||
        state.beta.size() != data.d()) {
      throw std::invalid_argument("run_wmlr: init state shape mismatch");
    }
  } else {
    Eigen::VectorXd gamma_ref = power_iteration(
        [&](const Eigen::VectorXd& v) {
          return second_moment_product_rows(data.xs, ys, 0, data.n(), v);
        },
        data.d(), 200, 1e-10);
    state = init_wmlr_state(data, cfg, gamma_ref);
  }

  WMLRRun run;
  run.trace.reserve(cfg.iters + 1);
  if (cfg.iters == 0) {
    WMLRState scratch = state;
    scratch.beta /= sy;
    ObjectiveEvalSym only_eval =
        objective_sym_rows(data.xs, ys, 0, data.n(), scratch, scfg);
    run.trace.push_back(make_trace_row(0, only_eval, state.beta, data, cfg,
                                       eval, elapsed_ms(t0)));
    run.state = std::move(state);
    return run;
  }

  state.beta /= sy;
  for (int t = 0; t < cfg.iters; ++t) {
    auto [next, step_eval] =
        gda_step_rows(state, data.xs, ys, 0, data.n(), scfg);
    run.trace.push_back(make_trace_row(t, step_eval, sy * state.beta, data,
                                       cfg, eval, elapsed_ms(t0)));
    state = std::move(next);
  }
  ObjectiveEvalSym final_eval =
      objective_sym_rows(data.xs, ys, 0, data.n(), state, scfg);
  state.beta *= sy;
  run.trace.push_back(make_trace_row(cfg.iters, final_eval, state.beta, data,
                                     cfg, eval, elapsed_ms(t0)));
  run.state = std::move(state);
  return run;
}

TheoryStepSizes theory_stepsizes(const Dataset& data, double lambda,
                                 const Eigen::VectorXd& gamma_ref) {
  if (data.n() < 1 || !(lambda > 0.0)) {
    throw std::invalid_argument("theory_stepsizes: need data and lambda > 0");
  }
  double c_max = data.xs.rowwise().norm().maxCoeff();
  TheoryStepSizes out;
  out.eta = c_max * c_max * data.ys.squaredNorm() /
            static_cast<double>(data.n());
  out.L_smooth =
      lambda + 4.0 * out.eta * (1.0 + out.eta / lambda + gamma_ref.norm());
  out.alpha_max = 1.0 / out.L_smooth;
  out.valid = lambda > 2.0 * out.eta;
  if (out.valid) {
    out.kappa = out.L_smooth / (lambda - 2.0 * out.eta);
    out.alpha_min = 1.0 / (out.kappa * out.kappa * out.L_smooth);
  } else {
    out.kappa = std::nan("");
    out.alpha_min = std::nan("");
  }
  return out;
}

WMLRStateK init_wmlr_state_k(const Dataset& data, const WMLRConfig& cfg,
                             const CriticK& critic) {
  Eigen::Index d = data.d();
  Eigen::Index n = data.n();
  int k = critic.k();
  if (k < 1 || critic.d() != d) {
    throw std::invalid_argument("init_wmlr_state_k: critic shape mismatch");
  }
  double scale =
      cfg.init_scale > 0.0 ? cfg.init_scale : 1.0 / std::sqrt(double(d));

  WMLRStateK st;
  st.critic = critic;
  CounterRng init_rng(cfg.seed, Stream::Init);
  st.betas.resize(k);
  for (int j = 0; j < k; ++j) {
    st.betas[j].resize(d);
    for (Eigen::Index c = 0; c < d; ++c) {
      st.betas[j][c] =
          scale * init_rng.normal(static_cast<std::uint64_t>(j) * d + c);
    }
  }

  CounterRng noise_rng(cfg.seed, Stream::SolverNoise);
  st.noise_unit.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    st.noise_unit[i] = noise_rng.normal(i);
  }
  CounterRng latent_rng(cfg.seed, Stream::SolverLatent);
  st.latents.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double u = latent_rng.uniform(i);
    int z = 1 + static_cast<int>(u * k);
    st.latents[i] = z > k ? k : z;
  }
  st.iter = 0;
  st.seed = cfg.seed;
  return st;
}

Eigen::VectorXd model_samples_k(const WMLRStateK& st, const Dataset& data,
                                double sigma2, NoiseMode mode) {
  if (st.noise_unit.size() != data.n() ||
      static_cast<Eigen::Index>(st.latents.size()) != data.n()) {
    throw std::invalid_argument("model_samples_k: state/data shape mismatch");
  }
  double sigma = std::sqrt(sigma2);
  Eigen::VectorXd yp(data.n());
  CounterRng rng(st.seed, Stream::SolverNoise);
  std::uint64_t base = (static_cast<std::uint64_t>(st.iter) + 1) *
                       static_cast<std::uint64_t>(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    double eps = mode == NoiseMode::Fixed ? st.noise_unit[i]
                                          : rng.normal(base + i);
    yp[i] = st.betas[st.latents[i] - 1].dot(data.xs.row(i)) + sigma * eps;
  }
  return yp;
}

ObjectiveEvalK objective_k(const Dataset& data, const WMLRStateK& st,
                           const WMLRConfig& cfg) {
  int k = st.critic.k();
  if (static_cast<int>(st.betas.size()) != k || k < 1) {
    throw std::invalid_argument("objective_k: state/critic shape mismatch");
  }
  double n = static_cast<double>(data.n());
  // Estimated mode keys the second-moment estimate off the first component;
  // the symmetric path is the one used when sigma is unknown.
  double sigma2 = window_sigma2(data.ys, 0, data.n(), st.betas.front(), cfg);
  Eigen::VectorXd yp = model_samples_k(st, data, sigma2, cfg.noise_mode);

  ObjectiveEvalK out;
  RegKEval reg = regularizer(st.critic);
  out.reg_term = reg.value;
  out.grad_gammas.resize(2 * k);
  out.grad_betas.resize(k);
  for (int j = 0; j < 2 * k; ++j) {
    out.grad_gammas[j] = Eigen::VectorXd::Zero(data.d());
  }
  for (int j = 0; j < k; ++j) {
    out.grad_betas[j] = Eigen::VectorXd::Zero(data.d());
  }

  double data_term = 0.0;
  double model_term = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    Eigen::VectorXd x = data.xs.row(i).transpose();
    data_term += psi_k(st.critic, x, data.ys[i]);
    PsiKGrads gd = psi_k_grads(st.critic, x, data.ys[i]);
    model_term += psi_k(st.critic, x, yp[i]);
    PsiKGrads gm = psi_k_grads(st.critic, x, yp[i]);
    for (int j = 0; j < 2 * k; ++j) {
      out.grad_gammas[j] += gd.d_gammas[j] - gm.d_gammas[j];
    }
    out.grad_betas[st.latents[i] - 1] -= gm.d_y * x;
  }
  out.data_term = data_term / n;
  out.model_term = model_term / n;
  for (int j = 0; j < 2 * k; ++j) {
    out.grad_gammas[j] = out.grad_gammas[j] / n - reg.d_gammas[j];
  }
  for (int j = 0; j < k; ++j) {
    out.grad_betas[j] /= n;
  }
  out.value = out.data_term - out.model_term - out.reg_term;
  return out;
}

std::pair<WMLRStateK, ObjectiveEvalK> gda_step_k(const WMLRStateK& st,
                                                 const Dataset& data,
                                                 const WMLRConfig& cfg) {
  ObjectiveEvalK eval = objective_k(data, st, cfg);
  if (!std::isfinite(eval.value)) {
    throw std::runtime_error("gda_step_k: non-finite value at iteration " +
                             std::to_string(st.iter));
  }
  WMLRStateK next = st;
  for (std::size_t j = 0; j < next.betas.size(); ++j) {
    if (!eval.grad_betas[j].allFinite()) {
      throw std::runtime_error("gda_step_k: non-finite gradient at iteration " +
                               std::to_string(st.iter));
    }
    next.betas[j] = st.betas[j] - cfg.resolved_alpha_min() * eval.grad_betas[j];
  }
  for (std::size_t j = 0; j < next.critic.gammas.size(); ++j) {
    if (!eval.grad_gammas[j].allFinite()) {
      throw std::runtime_error("gda_step_k: non-finite gradient at iteration " +
                               std::to_string(st.iter));
    }
    next.critic.gammas[j] =
        st.critic.gammas[j] + cfg.resolved_alpha_max() * eval.grad_gammas[j];
  }
  next.iter = st.iter + 1;
  return {std::move(next), std::move(eval)};
}

}  // namespace mlr
