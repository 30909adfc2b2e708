#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "mlr/model.hpp"

namespace mlr {

// Symmetric two-component discriminator. The noise scale is absorbed into
// the parameters: psi works on raw inner products y * gamma' x.
struct CriticSym {
  Eigen::VectorXd gamma1;
  Eigen::VectorXd gamma2;
  Eigen::VectorXd gamma_ref;
  double lambda = 0.5;
};

// General k-component discriminator: log-ratio of Gaussian-mixture kernels.
// gammas holds 2k vectors; pair i consists of gammas[2i] (numerator) and
// gammas[2i+1] (denominator). gamma_ref holds one anchor per pair.
struct CriticK {
  std::vector<Eigen::VectorXd> gammas;
  std::vector<Eigen::VectorXd> gamma_ref;
  double lambda = 0.5;
  double sigma2 = 1.0;

  int k() const { return static_cast<int>(gamma_ref.size()); }
  Eigen::Index d() const {
    return gammas.empty() ? 0 : gammas.front().size();
  }
};

double psi_sym(const CriticSym& c, const Eigen::VectorXd& x, double y);

struct PsiSymGrads {
  Eigen::VectorXd d_gamma1;
  Eigen::VectorXd d_gamma2;
  double d_y = 0.0;
};
PsiSymGrads psi_sym_grads(const CriticSym& c, const Eigen::VectorXd& x,
                          double y);

double psi_k(const CriticK& c, const Eigen::VectorXd& x, double y);

struct PsiKGrads {
  std::vector<Eigen::VectorXd> d_gammas;  // 2k entries, same layout as gammas
  double d_y = 0.0;
};
PsiKGrads psi_k_grads(const CriticK& c, const Eigen::VectorXd& x, double y);

struct RegSymEval {
  double value = 0.0;
  Eigen::VectorXd d_gamma1;
  Eigen::VectorXd d_gamma2;
};
// lambda * (||gamma1 - ref||^2 + ||gamma2 - ref||^2), gradients 2*lambda*(g - ref).
RegSymEval regularizer(const CriticSym& c);

struct RegKEval {
  double value = 0.0;
  std::vector<Eigen::VectorXd> d_gammas;
};
// lambda * sum_i (||gammas[2i] - ref_i||^2 + ||gammas[2i+1] - ref_i||^2).
RegKEval regularizer(const CriticK& c);

struct BracketConfig {
  double radius = 0.0;  // must be positive
  int grid_points = 2001;
  int refine_iters = 60;
  int max_widenings = 5;
};

// sup_{y'} psi_at(y') - (y - y')^2 / 2 by dense grid scan plus interval
// refinement of the best cell. The objective may be multimodal, hence the
// scan. Widens the bracket when the best grid point sits on the boundary;
// throws after max_widenings doublings.
double c_transform_oracle(const std::function<double(double)>& psi_at,
                          double y, const BracketConfig& cfg);

// |y| + 10 * (1 + max(||gamma1||, ||gamma2||) * ||x||).
double default_bracket_radius(const CriticSym& c, const Eigen::VectorXd& x,
                              double y);

// c-transform of psi_sym(c, x, .) with the default bracket.
double c_transform_sym(const CriticSym& c, const Eigen::VectorXd& x, double y);

// Fixed deterministic feature map; gradients stay with respect to gamma.
struct FeatureMap {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> phi;
  Eigen::Index d_out = 0;
};

double psi_sym(const CriticSym& c, const FeatureMap& fm,
               const Eigen::VectorXd& x, double y);
PsiSymGrads psi_sym_grads(const CriticSym& c, const FeatureMap& fm,
                          const Eigen::VectorXd& x, double y);
double psi_k(const CriticK& c, const FeatureMap& fm, const Eigen::VectorXd& x,
             double y);
PsiKGrads psi_k_grads(const CriticK& c, const FeatureMap& fm,
                      const Eigen::VectorXd& x, double y);

// Maps every feature row through fm.phi; ys and labels pass through.
Dataset apply_feature_map(const FeatureMap& fm, const Dataset& data);

}  // namespace mlr
