#include "mlr/critic.hpp"

#include <cmath>
#include <stdexcept>

#include "mlr/util.hpp"

namespace mlr {
namespace {

void check_dims(const CriticSym& c, const Eigen::VectorXd& x) {
  if (c.gamma1.size() != x.size() || c.gamma2.size() != x.size()) {
    throw std::invalid_argument("CriticSym: dimension mismatch");
  }
}

void check_dims(const CriticK& c, const Eigen::VectorXd& x) {
  if (c.k() < 1 || c.gammas.size() != 2 * c.gamma_ref.size()) {
    throw std::invalid_argument("CriticK: need 2k gammas and k references");
  }
  for (const auto& g : c.gammas) {
    if (g.size() != x.size()) {
      throw std::invalid_argument("CriticK: dimension mismatch");
    }
  }
  if (!(c.sigma2 > 0.0)) {
    throw std::invalid_argument("CriticK: sigma2 must be positive");
  }
}

Eigen::VectorXd mapped(const FeatureMap& fm, const Eigen::VectorXd& x) {
  Eigen::VectorXd fx = fm.phi(x);
  if (fx.size() != fm.d_out) {
    throw std::invalid_argument("FeatureMap: phi output size != d_out");
  }
  return fx;
}

// Softmax weights of -(y - g_j' x)^2 / (2 sigma2) over one mixture side,
// plus the shifted log-sum-exp value.
void side_weights(const CriticK& c, const Eigen::VectorXd& x, double y,
                  int parity, Eigen::VectorXd& weights, double& lse,
                  Eigen::VectorXd& residuals) {
  int k = c.k();
  weights.resize(k);
  residuals.resize(k);
  for (int i = 0; i < k; ++i) {
    double r = y - c.gammas[2 * i + parity].dot(x);
    residuals[i] = r;
    weights[i] = -r * r / (2.0 * c.sigma2);
  }
  double shift = weights.maxCoeff();
  weights = (weights.array() - shift).exp();
  double total = weights.sum();
  lse = shift + std::log(total);
  weights /= total;
}

}  // namespace

double psi_sym(const CriticSym& c, const Eigen::VectorXd& x, double y) {
  check_dims(c, x);
  return log2cosh(y * c.gamma1.dot(x)) - log2cosh(y * c.gamma2.dot(x));
}

PsiSymGrads psi_sym_grads(const CriticSym& c, const Eigen::VectorXd& x,
                          double y) {
  check_dims(c, x);
  double u1 = c.gamma1.dot(x);
  double u2 = c.gamma2.dot(x);
  double t1 = std::tanh(y * u1);
  double t2 = std::tanh(y * u2);
  PsiSymGrads g;
  g.d_gamma1 = (t1 * y) * x;
  g.d_gamma2 = (-t2 * y) * x;
  g.d_y = t1 * u1 - t2 * u2;
  return g;
}

double psi_k(const CriticK& c, const Eigen::VectorXd& x, double y) {
  check_dims(c, x);
  Eigen::VectorXd w, r;
  double lse_num, lse_den;
  side_weights(c, x, y, 0, w, lse_num, r);
  side_weights(c, x, y, 1, w, lse_den, r);
  return lse_num - lse_den;
}

PsiKGrads psi_k_grads(const CriticK& c, const Eigen::VectorXd& x, double y) {
  check_dims(c, x);
  int k = c.k();
  Eigen::VectorXd a, b, ra, rb;
  double lse_num, lse_den;
  side_weights(c, x, y, 0, a, lse_num, ra);
  side_weights(c, x, y, 1, b, lse_den, rb);

  PsiKGrads g;
  g.d_gammas.resize(2 * k);
  double dy = 0.0;
  for (int i = 0; i < k; ++i) {
    double ca = a[i] * ra[i] / c.sigma2;
    double cb = b[i] * rb[i] / c.sigma2;
    g.d_gammas[2 * i] = ca * x;
    g.d_gammas[2 * i + 1] = -cb * x;
    dy += -ca + cb;
  }
  g.d_y = dy;
  return g;
}

RegSymEval regularizer(const CriticSym& c) {
  RegSymEval out;
  Eigen::VectorXd r1 = c.gamma1 - c.gamma_ref;
  Eigen::VectorXd r2 = c.gamma2 - c.gamma_ref;
  out.value = c.lambda * (r1.squaredNorm() + r2.squaredNorm());
  out.d_gamma1 = 2.0 * c.lambda * r1;
  out.d_gamma2 = 2.0 * c.lambda * r2;
  return out;
}

RegKEval regularizer(const CriticK& c) {
  RegKEval out;
  out.d_gammas.resize(c.gammas.size());
  out.value = 0.0;
  for (int i = 0; i < c.k(); ++i) {
    for (int parity = 0; parity < 2; ++parity) {
      Eigen::VectorXd r = c.gammas[2 * i + parity] - c.gamma_ref[i];
      out.value += c.lambda * r.squaredNorm();
      out.d_gammas[2 * i + parity] = 2.0 * c.lambda * r;
    }
  }
  return out;
}

double c_transform_oracle(const std::function<double(double)>& psi_at,
                          double y, const BracketConfig& cfg) {
  if (!(cfg.radius > 0.0) || cfg.grid_points < 3) {
    throw std::invalid_argument(
        "c_transform_oracle: need positive radius and >= 3 grid points");
  }
  auto objective = [&](double yp) {
    double dy = y - yp;
    return psi_at(yp) - 0.5 * dy * dy;
  };

  double radius = cfg.radius;
  for (int w = 0; w <= cfg.max_widenings; ++w, radius *= 2.0) {
    double lo = y - radius;
    double step = 2.0 * radius / (cfg.grid_points - 1);
    int best = 0;
    double best_val = objective(lo);
    for (int i = 1; i < cfg.grid_points; ++i) {
      double v = objective(lo + step * i);
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
    if (best == 0 || best == cfg.grid_points - 1) {
      continue;  // maximizer may sit outside the bracket
    }
    double a = lo + step * (best - 1);
    double b = lo + step * (best + 1);
    for (int it = 0; it < cfg.refine_iters; ++it) {
      double m1 = a + (b - a) / 3.0;
      double m2 = b - (b - a) / 3.0;
      double v1 = objective(m1);
      double v2 = objective(m2);
      if (v1 > best_val) best_val = v1;
      if (v2 > best_val) best_val = v2;
      if (v1 < v2) {
        a = m1;
      } else {
        b = m2;
      }
    }
    return best_val;
  }
  throw std::runtime_error(
      "c_transform_oracle: maximizer escaped the bracket after widening");
}

double default_bracket_radius(const CriticSym& c, const Eigen::VectorXd& x,
                              double y) {
  double gmax = std::max(c.gamma1.norm(), c.gamma2.norm());
  return std::abs(y) + 10.0 * (1.0 + gmax * x.norm());
}

double c_transform_sym(const CriticSym& c, const Eigen::VectorXd& x,
                       double y) {
  check_dims(c, x);
  double u1 = c.gamma1.dot(x);
  double u2 = c.gamma2.dot(x);
  BracketConfig cfg;
  cfg.radius = default_bracket_radius(c, x, y);
  return c_transform_oracle(
      [u1, u2](double yp) { return log2cosh(yp * u1) - log2cosh(yp * u2); }, y,
      cfg);
}

double psi_sym(const CriticSym& c, const FeatureMap& fm,
               const Eigen::VectorXd& x, double y) {
  return psi_sym(c, mapped(fm, x), y);
}

PsiSymGrads psi_sym_grads(const CriticSym& c, const FeatureMap& fm,
                          const Eigen::VectorXd& x, double y) {
  return psi_sym_grads(c, mapped(fm, x), y);
}

double psi_k(const CriticK& c, const FeatureMap& fm, const Eigen::VectorXd& x,
             double y) {
  return psi_k(c, mapped(fm, x), y);
}

PsiKGrads psi_k_grads(const CriticK& c, const FeatureMap& fm,
                      const Eigen::VectorXd& x, double y) {
  return psi_k_grads(c, mapped(fm, x), y);
}

Dataset apply_feature_map(const FeatureMap& fm, const Dataset& data) {
  if (fm.d_out < 1) {
    throw std::invalid_argument("apply_feature_map: d_out must be positive");
  }
  Dataset out;
  out.xs.resize(data.n(), fm.d_out);
  out.ys = data.ys;
  out.zs = data.zs;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out.xs.row(i) = mapped(fm, data.xs.row(i).transpose()).transpose();
  }
  return out;
}

}  // namespace mlr
