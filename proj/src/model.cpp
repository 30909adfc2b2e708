#include "mlr/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mlr/rng.hpp"
#include "mlr/util.hpp"

namespace mlr {
namespace {

constexpr Eigen::Index kMaxRejectionAttempts = 4096;

void validate_params(const MLRParams& params) {
  if (params.k() < 1) {
    throw std::invalid_argument("MLRParams: need at least one component");
  }
  if (!(params.sigma2 > 0.0)) {
    throw std::invalid_argument("MLRParams: sigma2 must be positive");
  }
  Eigen::Index d = params.d();
  for (const auto& b : params.betas) {
    if (b.size() != d) {
      throw std::invalid_argument("MLRParams: component dimension mismatch");
    }
  }
}

int draw_label(const CounterRng& rng, std::uint64_t counter, int k) {
  double u = rng.uniform(counter);
  int z = 1 + static_cast<int>(u * k);
  return z > k ? k : z;
}

// One feature row; bounded law rejection-samples whole vectors, each attempt
// consuming its own counter block so accepted draws stay reproducible.
// InnerStride<>: rows of a column-major matrix are not contiguous.
void draw_x_row(const CounterRng& rng, Eigen::Index row, Eigen::Index d,
                const XLaw& law,
                Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
  if (law.norm_bound <= 0.0) {
    for (Eigen::Index j = 0; j < d; ++j) {
      out[j] = rng.normal(static_cast<std::uint64_t>(row) * d + j);
    }
    return;
  }
  for (Eigen::Index t = 0; t < kMaxRejectionAttempts; ++t) {
    std::uint64_t base =
        (static_cast<std::uint64_t>(row) * kMaxRejectionAttempts + t) * d;
    for (Eigen::Index j = 0; j < d; ++j) {
      out[j] = rng.normal(base + j);
    }
    if (out.norm() <= law.norm_bound) {
      return;
    }
  }
  throw std::runtime_error("generate_dataset: norm bound rejected all draws");
}

}  // namespace

bool MLRParams::is_symmetric_pair() const {
  return k() == 2 && betas[0].size() == betas[1].size() &&
         betas[1] == -betas[0];
}

MLRParams symmetric_params(const Eigen::VectorXd& beta, double sigma2) {
  MLRParams p;
  p.betas = {beta, -beta};
  p.sigma2 = sigma2;
  return p;
}

Eigen::VectorXd beta_star_from_shell(Eigen::Index d, double snr,
                                     std::uint64_t seed) {
  if (d < 1 || !(snr > 0.0)) {
    throw std::invalid_argument("beta_star_from_shell: need d >= 1, snr > 0");
  }
  CounterRng rng(seed, Stream::BetaStar);
  Eigen::VectorXd v(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    v[j] = rng.normal(j);
  }
  double norm = v.norm();
  if (norm == 0.0) {
    throw std::runtime_error("beta_star_from_shell: degenerate draw");
  }
  return (snr / norm) * v;
}

Dataset FederatedDataset::shard(std::size_t m) const {
  const AgentRange& a = agents.at(m);
  Dataset out;
  out.xs = data.xs.middleRows(a.row_start, a.row_count);
  out.ys = data.ys.segment(a.row_start, a.row_count);
  if (data.has_labels()) {
    out.zs.assign(data.zs.begin() + a.row_start,
                  data.zs.begin() + a.row_start + a.row_count);
  }
  return out;
}

Dataset generate_dataset(const GenConfig& cfg, const MLRParams& params) {
  validate_params(params);
  if (cfg.n < 1 || cfg.d < 1) {
    throw std::invalid_argument("generate_dataset: need n >= 1, d >= 1");
  }
  if (cfg.d != params.d()) {
    throw std::invalid_argument("generate_dataset: dimension mismatch");
  }

  CounterRng rx(cfg.seed, Stream::DataX);
  CounterRng rn(cfg.seed, Stream::DataNoise);
  CounterRng rz(cfg.seed, Stream::DataLatent);
  double sigma = std::sqrt(params.sigma2);

  Dataset out;
  out.xs.resize(cfg.n, cfg.d);
  out.ys.resize(cfg.n);
  out.zs.resize(cfg.n);
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    draw_x_row(rx, i, cfg.d, cfg.x_law, out.xs.row(i));
    int z = draw_label(rz, i, params.k());
    out.zs[i] = z;
    out.ys[i] = params.betas[z - 1].dot(out.xs.row(i)) + sigma * rn.normal(i);
  }
  return out;
}

FederatedDataset generate_federated(const GenConfig& cfg,
                                    const MLRParams& params,
                                    Eigen::Index n_agents,
                                    Eigen::Index per_agent_n,
                                    FedAssignment mode) {
  if (n_agents < 1 || per_agent_n < 1) {
    throw std::invalid_argument(
        "generate_federated: need n_agents >= 1, per_agent_n >= 1");
  }
  GenConfig pooled_cfg = cfg;
  pooled_cfg.n = n_agents * per_agent_n;

  FederatedDataset fed;
  fed.agents.resize(n_agents);
  for (Eigen::Index m = 0; m < n_agents; ++m) {
    fed.agents[m].row_start = m * per_agent_n;
    fed.agents[m].row_count = per_agent_n;
  }

  if (mode == FedAssignment::PerSample) {
    fed.data = generate_dataset(pooled_cfg, params);
    return fed;
  }

  validate_params(params);
  if (!params.is_symmetric_pair()) {
    throw std::invalid_argument(
        "generate_federated: per-agent assignment requires a symmetric pair");
  }
  if (cfg.d != params.d()) {
    throw std::invalid_argument("generate_federated: dimension mismatch");
  }

  CounterRng rx(cfg.seed, Stream::DataX);
  CounterRng rn(cfg.seed, Stream::DataNoise);
  CounterRng rz(cfg.seed, Stream::DataLatent);
  double sigma = std::sqrt(params.sigma2);

  Dataset& data = fed.data;
  data.xs.resize(pooled_cfg.n, cfg.d);
  data.ys.resize(pooled_cfg.n);
  data.zs.resize(pooled_cfg.n);
  for (Eigen::Index m = 0; m < n_agents; ++m) {
    int z_m = draw_label(rz, m, 2);
    fed.agents[m].z = z_m;
    for (Eigen::Index r = 0; r < per_agent_n; ++r) {
      Eigen::Index i = m * per_agent_n + r;
      draw_x_row(rx, i, cfg.d, cfg.x_law, data.xs.row(i));
      data.zs[i] = z_m;
      data.ys[i] =
          params.betas[z_m - 1].dot(data.xs.row(i)) + sigma * rn.normal(i);
    }
  }
  return fed;
}

Eigen::VectorXd bayes_posterior(const MLRParams& params,
                                const Eigen::VectorXd& x, double y) {
  validate_params(params);
  if (x.size() != params.d()) {
    throw std::invalid_argument("bayes_posterior: dimension mismatch");
  }
  int k = params.k();
  Eigen::VectorXd logw(k);
  for (int j = 0; j < k; ++j) {
    double r = y - params.betas[j].dot(x);
    logw[j] = -r * r / (2.0 * params.sigma2);
  }
  Eigen::VectorXd w = (logw.array() - logw.maxCoeff()).exp();
  return w / w.sum();
}

double oracle_transport(const MLRParams& src, const MLRParams& dst,
                        const Eigen::VectorXd& x, double y, int z) {
  if (src.k() != dst.k() || src.d() != dst.d()) {
    throw std::invalid_argument("oracle_transport: src/dst shape mismatch");
  }
  if (z < 1 || z > src.k()) {
    throw std::invalid_argument("oracle_transport: label out of range");
  }
  return y + (dst.betas[z - 1] - src.betas[z - 1]).dot(x);
}

Dataset transport_dataset(const Dataset& src_data, const MLRParams& src,
                          const MLRParams& dst) {
  if (!src_data.has_labels()) {
    throw std::invalid_argument("transport_dataset: labels required");
  }
  Dataset out = src_data;
  for (Eigen::Index i = 0; i < src_data.n(); ++i) {
    out.ys[i] = oracle_transport(src, dst, src_data.xs.row(i).transpose(),
                                 src_data.ys[i], src_data.zs[i]);
  }
  return out;
}

Dataset symmetrize(const Dataset& data, const Eigen::VectorXd& beta_bar) {
  if (beta_bar.size() != data.d()) {
    throw std::invalid_argument("symmetrize: dimension mismatch");
  }
  Dataset out = data;
  out.ys -= data.xs * beta_bar;
  return out;
}

double relative_error(const Eigen::VectorXd& beta_hat,
                      const Eigen::VectorXd& beta_star, bool sign_aware) {
  if (beta_hat.size() != beta_star.size()) {
    throw std::invalid_argument("relative_error: dimension mismatch");
  }
  double denom = beta_star.norm();
  if (denom == 0.0) {
    throw std::invalid_argument("relative_error: beta_star must be nonzero");
  }
  double err = (beta_hat - beta_star).norm();
  if (sign_aware) {
    err = std::min(err, (beta_hat + beta_star).norm());
  }
  return err / denom;
}

double nll_symmetric(const Dataset& data, const Eigen::VectorXd& beta,
                     double sigma2) {
  if (!(sigma2 > 0.0)) {
    throw std::invalid_argument("nll_symmetric: sigma2 must be positive");
  }
  if (beta.size() != data.d() || data.n() < 1) {
    throw std::invalid_argument("nll_symmetric: shape mismatch");
  }
  constexpr double ln2 = 0.6931471805599453;
  constexpr double ln_2pi = 1.8378770664093455;
  Eigen::ArrayXd m = (data.xs * beta).array();
  Eigen::ArrayXd y = data.ys.array();
  double quad = (y.square() + m.square()).mean() / (2.0 * sigma2);
  double lc = (y * m / sigma2).unaryExpr([](double t) { return log2cosh(t); })
                  .mean();
  return 0.5 * (ln_2pi + std::log(sigma2)) + quad - lc + ln2;
}

double estimate_sigma2(const Dataset& data, const Eigen::VectorXd& beta) {
  if (beta.size() != data.d() || data.n() < 1) {
    throw std::invalid_argument("estimate_sigma2: shape mismatch");
  }
  constexpr double floor = 1e-8;
  double v = data.ys.squaredNorm() / static_cast<double>(data.n()) -
             beta.squaredNorm();
  return v > floor ? v : floor;
}

}  // namespace mlr
