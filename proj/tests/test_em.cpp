#include <cmath>

#include "doctest.h"
#include "mlr/em.hpp"
#include "mlr/model.hpp"
#include "mlr/rng.hpp"
#include "mlr/util.hpp"

using namespace mlr;

namespace {

Dataset make_data(Eigen::Index n, Eigen::Index d, double snr, double sigma2,
                  std::uint64_t seed) {
  GenConfig gen{n, d, snr, sigma2, XLaw{}, seed};
  return generate_dataset(gen, symmetric_params(
                                   beta_star_from_shell(d, snr, seed), sigma2));
}

}  // namespace

TEST_CASE("init_em_state is seeded with unit sigma2") {
  EMState a = init_em_state(6, 21);
  EMState b = init_em_state(6, 21);
  EMState c = init_em_state(6, 22);
  CHECK((a.beta.array() == b.beta.array()).all());
  CHECK((a.beta - c.beta).norm() > 1e-8);
  CHECK(a.sigma2 == 1.0);
  CHECK(a.beta.size() == 6);
}

TEST_CASE("e_weights are the logistic posterior of the plus component") {
  Dataset data = make_data(60, 4, 2.0, 1.0, 23);
  EMState st = init_em_state(4, 23);
  st.sigma2 = 1.3;
  Eigen::VectorXd w = e_weights(st, data);
  REQUIRE(w.size() == 60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    double m = data.xs.row(i).dot(st.beta);
    CHECK(w(i) == doctest::Approx(logistic(2.0 * data.ys(i) * m / st.sigma2))
                      .epsilon(1e-12));
  }
  Eigen::VectorXd win = e_weights_rows(st, data.xs, data.ys, 20, 15);
  CHECK((win.array() == w.segment(20, 15).array()).all());
}

TEST_CASE("q_function matches hand algebra on a two sample problem") {
  Dataset data;
  data.xs.resize(2, 1);
  data.xs << 1.0, -2.0;
  data.ys.resize(2);
  data.ys << 0.5, 1.5;
  EMState old;
  old.beta = Eigen::VectorXd::Constant(1, 0.8);
  old.sigma2 = 1.1;
  EMState next;
  next.beta = Eigen::VectorXd::Constant(1, 0.6);
  next.sigma2 = 0.9;

  double acc = 0.0;
  for (int i = 0; i < 2; ++i) {
    double m_old = data.xs(i, 0) * old.beta(0);
    double w = logistic(2.0 * data.ys(i) * m_old / old.sigma2);
    double m = data.xs(i, 0) * next.beta(0);
    double rp = data.ys(i) - m;
    double rm = data.ys(i) + m;
    acc += w * rp * rp + (1.0 - w) * rm * rm;
  }
  double expect = -std::log(next.sigma2) / 2.0 -
                  acc / (2.0 * next.sigma2 * 2.0);
  CHECK(q_function(next, old, data) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gem_grads match central differences of the q function") {
  const double h = 1e-5;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    Eigen::Index d = 2 + inst % 3;
    Dataset data = make_data(30, d, 2.0, 1.0, 500 + inst);
    EMState old = init_em_state(d, 500 + inst);
    old.sigma2 = 0.9;
    EMState next = init_em_state(d, 600 + inst);
    next.sigma2 = 1.2;
    GEMGrads g = gem_grads(next, old, data);
    for (Eigen::Index j = 0; j < d; ++j) {
      EMState np = next;
      EMState nm = next;
      np.beta(j) += h;
      nm.beta(j) -= h;
      double fd = (q_function(np, old, data) - q_function(nm, old, data)) /
                  (2 * h);
      worst = std::max(worst, std::abs(fd - g.d_beta(j)) /
                                  std::max(1.0, std::abs(g.d_beta(j))));
    }
    EMState sp = next;
    EMState sm = next;
    sp.sigma2 += h;
    sm.sigma2 -= h;
    double fd =
        (q_function(sp, old, data) - q_function(sm, old, data)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.d_sigma2) /
                                std::max(1.0, std::abs(g.d_sigma2)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("gem_grads_rows slice consistently") {
  Dataset data = make_data(50, 3, 2.0, 1.0, 25);
  EMState old = init_em_state(3, 25);
  EMState next = init_em_state(3, 26);
  GEMGrads full = gem_grads(next, old, data);
  GEMGrads left = gem_grads_rows(next, old, data.xs, data.ys, 0, 20);
  GEMGrads right = gem_grads_rows(next, old, data.xs, data.ys, 20, 30);
  Eigen::VectorXd mix = 0.4 * left.d_beta + 0.6 * right.d_beta;
  CHECK((full.d_beta - mix).norm() <= 1e-12 * (1.0 + mix.norm()));
  CHECK(full.d_sigma2 ==
        doctest::Approx(0.4 * left.d_sigma2 + 0.6 * right.d_sigma2)
            .epsilon(1e-10));
}

TEST_CASE("m_step output is a stationary point of the q function") {
  for (int inst = 0; inst < 25; ++inst) {
    Eigen::Index d = 3 + inst % 3;
    Dataset data = make_data(200, d, 3.0, 1.0, 700 + inst);
    EMState old = init_em_state(d, 700 + inst);
    EMState next = m_step(old, data);
    GEMGrads g = gem_grads(next, old, data);
    CHECK(g.d_beta.norm() <= 1e-9);
    CHECK(std::abs(g.d_sigma2) <= 1e-9);
    // And no ascent direction improves on it.
    CHECK(q_function(next, old, data) >= q_function(old, old, data) - 1e-12);
  }
}

TEST_CASE("m_step with a known covariance solves that normal equation") {
  Eigen::Index d = 4;
  Dataset data = make_data(300, d, 2.0, 1.0, 27);
  EMState old = init_em_state(d, 27);
  Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(d, d);
  EMState next = m_step(old, data, &identity);
  // With sigma_x = I the maximizing beta is the weighted moment itself:
  // beta = (1/n) sum (2 w_i - 1) y_i x_i.
  Eigen::VectorXd w = e_weights(old, data);
  Eigen::VectorXd want = Eigen::VectorXd::Zero(d);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    want += (2.0 * w(i) - 1.0) * data.ys(i) * data.xs.row(i).transpose();
  }
  want /= double(data.n());
  CHECK((next.beta - want).norm() <= 1e-12 * (1.0 + want.norm()));
  CHECK(next.sigma2 > 0.0);
}

TEST_CASE("run_em descends the mixture likelihood") {
  Dataset data = make_data(2000, 4, 3.0, 1.0, 28);
  EMState init = init_em_state(4, 28);
  EvalTarget target{beta_star_from_shell(4, 3.0, 28)};
  EMRun run = run_em(data, init, 30, &target);
  REQUIRE(run.trace.size() == 31);
  for (std::size_t t = 1; t < run.trace.size(); ++t) {
    CHECK(run.trace[t].nll <= run.trace[t - 1].nll + 1e-10);
  }
  CHECK(run.trace.back().rel_err < 0.2);
  EMRun again = run_em(data, init, 30, &target);
  CHECK((again.state.beta.array() == run.state.beta.array()).all());
}

TEST_CASE("run_em accepts an injected covariance") {
  Eigen::Index d = 3;
  Dataset data = make_data(1500, d, 3.0, 1.0, 29);
  EMState init = init_em_state(d, 29);
  Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(d, d);
  EMRun with_id = run_em(data, init, 20, nullptr, &identity);
  EMRun plain = run_em(data, init, 20);
  // Different normal equations, different fixed points.
  CHECK((with_id.state.beta - plain.state.beta).norm() > 1e-8);
  CHECK(std::isfinite(with_id.trace.back().nll));
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS(run_em(data, init, 5, nullptr, &bad));
}

TEST_CASE("run_gem ascends q with a small step and floors sigma2") {
  Dataset data = make_data(500, 3, 2.0, 1.0, 30);
  EMState init = init_em_state(3, 30);
  GEMConfig cfg;
  cfg.alpha = 1e-3;
  cfg.iters = 1;
  EMRun run = run_gem(data, init, cfg);
  CHECK(q_function(run.state, init, data) >=
        q_function(init, init, data) - 1e-12);

  GEMConfig stomp;
  stomp.alpha = 1e6;  // drives sigma2 negative before the floor
  stomp.iters = 3;
  stomp.sigma2_floor = 1e-8;
  EMRun floored = run_gem(data, init, stomp);
  CHECK(floored.state.sigma2 >= 1e-8);
}

TEST_CASE("run_gem traces every step deterministically") {
  Dataset data = make_data(800, 4, 2.0, 1.0, 31);
  EMState init = init_em_state(4, 31);
  GEMConfig cfg;
  cfg.alpha = 0.4;
  cfg.iters = 20;
  EvalTarget target{beta_star_from_shell(4, 2.0, 31)};
  EMRun a = run_gem(data, init, cfg, &target);
  EMRun b = run_gem(data, init, cfg, &target);
  REQUIRE(a.trace.size() == 21);
  CHECK((a.state.beta.array() == b.state.beta.array()).all());
  for (std::size_t t = 0; t < a.trace.size(); ++t) {
    CHECK(a.trace[t].rel_err == b.trace[t].rel_err);
  }
}
