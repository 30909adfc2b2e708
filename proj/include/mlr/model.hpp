#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace mlr {

// Mixture of k linear models: y = beta_z' x + eps, eps ~ N(0, sigma2),
// z uniform on {1..k}.
struct MLRParams {
  std::vector<Eigen::VectorXd> betas;
  double sigma2 = 1.0;

  int k() const { return static_cast<int>(betas.size()); }
  Eigen::Index d() const { return betas.empty() ? 0 : betas.front().size(); }
  // k == 2 with betas[1] == -betas[0] exactly.
  bool is_symmetric_pair() const;
};

MLRParams symmetric_params(const Eigen::VectorXd& beta, double sigma2);

// Drawn uniformly from the sphere of radius snr (seeded, stream BetaStar).
Eigen::VectorXd beta_star_from_shell(Eigen::Index d, double snr,
                                     std::uint64_t seed);

struct XLaw {
  // 0 disables the bound; > 0 rejection-samples standard normals into the
  // ball of this radius.
  double norm_bound = 0.0;
};

struct GenConfig {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  double snr = 1.0;
  double sigma2 = 1.0;
  XLaw x_law;
  std::uint64_t seed = 0;
};

struct Dataset {
  Eigen::MatrixXd xs;   // n x d
  Eigen::VectorXd ys;   // n
  std::vector<int> zs;  // latent labels in 1..k; empty when not retained

  Eigen::Index n() const { return xs.rows(); }
  Eigen::Index d() const { return xs.cols(); }
  bool has_labels() const { return !zs.empty(); }
};

struct AgentRange {
  Eigen::Index row_start = 0;
  Eigen::Index row_count = 0;
  int z = 0;  // shared latent label under per-agent assignment; 0 otherwise
};

// Shards are contiguous row ranges of one pooled dataset, so federated code
// can address agent data without copies and the pooled view is free.
struct FederatedDataset {
  Dataset data;
  std::vector<AgentRange> agents;

  Eigen::Index n_agents() const {
    return static_cast<Eigen::Index>(agents.size());
  }
  Dataset shard(std::size_t m) const;
};

enum class FedAssignment { PerSample, PerAgent };

Dataset generate_dataset(const GenConfig& cfg, const MLRParams& params);

// PerSample: generate_dataset sharded evenly. PerAgent: one latent label per
// agent (requires a symmetric pair), all of an agent's samples share it.
FederatedDataset generate_federated(const GenConfig& cfg,
                                    const MLRParams& params,
                                    Eigen::Index n_agents,
                                    Eigen::Index per_agent_n,
                                    FedAssignment mode);

// Posterior over components given (x, y), uniform prior, max-shifted.
Eigen::VectorXd bayes_posterior(const MLRParams& params,
                                const Eigen::VectorXd& x, double y);

// y + (beta_dst_z - beta_src_z)' x for the true label z of (x, y) under src.
double oracle_transport(const MLRParams& src, const MLRParams& dst,
                        const Eigen::VectorXd& x, double y, int z);

// Applies oracle_transport row-wise; requires src labels to be retained.
Dataset transport_dataset(const Dataset& src_data, const MLRParams& src,
                          const MLRParams& dst);

// y_i <- y_i - beta_bar' x_i.
Dataset symmetrize(const Dataset& data, const Eigen::VectorXd& beta_bar);

// ||bh - bs|| / ||bs||; sign_aware takes the minimum over +-bh since the
// symmetric model identifies beta* only up to sign.
double relative_error(const Eigen::VectorXd& beta_hat,
                      const Eigen::VectorXd& beta_star,
                      bool sign_aware = true);

// -(1/n) sum log( 1/2 N(y; b'x, s2) + 1/2 N(y; -b'x, s2) ).
double nll_symmetric(const Dataset& data, const Eigen::VectorXd& beta,
                     double sigma2);

// max( mean(y^2) - ||beta||^2, 1e-8 ).
double estimate_sigma2(const Dataset& data, const Eigen::VectorXd& beta);

}  // namespace mlr
