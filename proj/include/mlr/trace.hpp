#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mlr {

// One solver iteration as logged. Metrics that do not apply (e.g. rel_err
// without a ground truth) are NaN.
struct TraceRow {
  int iter = 0;
  double objective = 0.0;
  double data_term = 0.0;
  double model_term = 0.0;
  double reg_term = 0.0;
  double grad_beta_norm = 0.0;
  double rel_err = 0.0;
  double nll = 0.0;
  double wall_ms = 0.0;
};

using Trace = std::vector<TraceRow>;

// Ground truth handed to runners so traces can carry relative error.
struct EvalTarget {
  Eigen::VectorXd beta_star;
};

}  // namespace mlr
