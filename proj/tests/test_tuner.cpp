#include <doctest.h>

#include <cmath>
#include <vector>

#include "dcots/ac_solver.hpp"
#include "dcots/tuner.hpp"
#include "test_support.hpp"

using namespace dcots;

namespace {

Objective quadratic(const Eigen::MatrixXd& h) {
  return [h](const Eigen::VectorXd& x) -> std::optional<Evaluation> {
    return Evaluation{0.5 * x.dot(h * x), h * x};
  };
}

Eigen::MatrixXd surrogate_hessian() {
  Eigen::MatrixXd h(2, 2);
  h << 3, 1, 1, 3;
  return h;
}

/// Records every evaluation so accepted steps can be re-checked afterwards.
struct Recorder {
  Objective inner;
  std::vector<std::pair<Eigen::VectorXd, Evaluation>> log;

  Objective wrap() {
    return [this](const Eigen::VectorXd& x) -> std::optional<Evaluation> {
      auto ev = inner(x);
      if (ev) log.emplace_back(x, *ev);
      return ev;
    };
  }

  /// Point whose evaluation produced exactly `value`, latest first.
  const std::pair<Eigen::VectorXd, Evaluation>* find(double value) const {
    for (auto it = log.rbegin(); it != log.rend(); ++it)
      if (it->second.value == value) return &*it;
    return nullptr;
  }
};

void check_trace(const TunerTrace& trace) {
  for (std::size_t k = 1; k < trace.records.size(); ++k) {
    CHECK(trace.records[k].loss <= trace.records[k - 1].loss);
    CHECK(trace.records[k].alpha > 0.0);
  }
}

/// Post-hoc Armijo check of every accepted step.
void check_armijo(const Recorder& rec, const TunerTrace& trace, double alpha1) {
  for (std::size_t k = 1; k < trace.records.size(); ++k) {
    const auto* prev = rec.find(trace.records[k - 1].loss);
    const auto* next = rec.find(trace.records[k].loss);
    REQUIRE(prev != nullptr);
    REQUIRE(next != nullptr);
    const double alpha = trace.records[k].alpha;
    const Eigen::VectorXd p = (next->first - prev->first) / alpha;
    CHECK(next->second.value <= prev->second.value + alpha1 * alpha * prev->second.grad.dot(p) + 1e-12);
  }
}

}  // namespace

TEST_CASE("Wolfe search on a one-dimensional quadratic") {
  const Objective f = [](const Eigen::VectorXd& x) -> std::optional<Evaluation> {
    return Evaluation{x.squaredNorm(), 2.0 * x};
  };
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  const WolfeResult r = wolfe_search(x, Eigen::VectorXd::Constant(1, -2.0), *f(x), f, 1e-4, 0.4, 40);
  CHECK(r.ok);
  CHECK_FALSE(r.armijo_only);
  CHECK(r.alpha == 0.5);
  CHECK(r.x[0] == 0.0);
}

TEST_CASE("Wolfe search on a linear function keeps the full step") {
  const Objective f = [](const Eigen::VectorXd& x) -> std::optional<Evaluation> {
    return Evaluation{3.0 * x[0], Eigen::VectorXd::Constant(1, 3.0)};
  };
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  const WolfeResult r = wolfe_search(x, Eigen::VectorXd::Constant(1, -3.0), *f(x), f, 1e-4, 0.4, 40);
  CHECK(r.ok);
  CHECK(r.alpha == 1.0);
  CHECK(r.armijo_only);
}

TEST_CASE("Wolfe search rejects an ascent direction") {
  const Objective f = quadratic(surrogate_hessian());
  const Eigen::Vector2d x(1, 1);
  CHECK_THROWS_AS(wolfe_search(x, Eigen::Vector2d(1, 1), *f(x), f, 1e-4, 0.4, 40), std::invalid_argument);
}

TEST_CASE("Polak-Ribiere coefficient") {
  const Eigen::Vector2d g(0.3, -1.2);
  CHECK(polak_ribiere(g, g) == 0.0);
  CHECK(polak_ribiere(Eigen::Vector2d(0, 1), Eigen::Vector2d(1, 0)) == 1.0);
  CHECK(polak_ribiere(Eigen::Vector2d(0.5, 0), Eigen::Vector2d(1, 0)) == -0.25);
}

TEST_CASE("quadratic surrogate converges in at most two iterations") {
  Recorder rec{quadratic(surrogate_hessian()), {}};
  TunerConfig cfg;
  cfg.epsilon = 1e-10;
  const MinimizeResult r = conjugate_gradient(rec.wrap(), Eigen::Vector2d(3, 2), cfg);
  CHECK(r.trace.status == TunerStatus::converged);
  CHECK(r.trace.records.size() - 1 <= 2);
  CHECK(r.x.norm() < 1e-10);
  check_trace(r.trace);
  check_armijo(rec, r.trace, cfg.alpha1);
}

TEST_CASE("steepest descent still converges on the surrogate") {
  TunerConfig cfg;
  cfg.restart_period = 1;
  cfg.epsilon = 1e-8;
  const MinimizeResult r = conjugate_gradient(quadratic(surrogate_hessian()), Eigen::Vector2d(3, 2), cfg);
  CHECK(r.trace.status == TunerStatus::converged);
  for (const auto& rec : r.trace.records) CHECK(rec.beta == 0.0);
  check_trace(r.trace);
}

TEST_CASE("beta clamp and plain Polak-Ribiere") {
  // Rosenbrock exercises negative raw coefficients.
  const Objective rosen = [](const Eigen::VectorXd& x) -> std::optional<Evaluation> {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    Eigen::VectorXd g(2);
    g << -2.0 * a - 400.0 * x[0] * b, 200.0 * b;
    return Evaluation{a * a + 100.0 * b * b, g};
  };
  TunerConfig cfg;
  cfg.max_iter = 500;
  Recorder rec{rosen, {}};
  const MinimizeResult r = conjugate_gradient(rec.wrap(), Eigen::Vector2d(-1.2, 1.0), cfg);
  CHECK(r.trace.status == TunerStatus::converged);
  CHECK((r.x - Eigen::Vector2d(1, 1)).norm() < 1e-4);
  check_trace(r.trace);
  check_armijo(rec, r.trace, cfg.alpha1);
  for (std::size_t k = 1; k < r.trace.records.size(); ++k) {
    const auto& t = r.trace.records[k];
    CHECK(t.beta >= 0.0);
    if (t.beta_raw < 0.0) CHECK(t.beta == 0.0);
  }

  cfg.plain_polak_ribiere = true;
  const MinimizeResult plain = conjugate_gradient(rosen, Eigen::Vector2d(-1.2, 1.0), cfg);
  check_trace(plain.trace);
}

TEST_CASE("configuration is validated") {
  TunerConfig cfg;
  cfg.alpha1 = 0.5;
  cfg.alpha2 = 0.4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TunerConfig{};
  cfg.max_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(TunerConfig{}.validate());
}

TEST_CASE("targets equal to the initial DC flows stop at iteration zero") {
  const NetworkCase net = load_case(testing::case_path("case5_pjm"));
  const DcParameters cold = cold_start(net);
  const Eigen::VectorXd targets = solve_dc_opf(net, cold, DcOpfMode::model6_inner).s_flow_dc;
  const TuneResult r = tune(net, cold, targets);
  CHECK(r.trace.status == TunerStatus::converged);
  CHECK(r.trace.records.size() == 1);
  CHECK(r.trace.records[0].loss == 0.0);
  CHECK(r.trace.records[0].grad_norm == 0.0);
}

TEST_CASE("case3 tuning reduces the flow mismatch") {
  const NetworkCase net = load_case(testing::case_path("case3_lmbd"));
  const AcSolution ac = solve_ac_opf(net, Topology::all_in(net));
  REQUIRE(ac.converged);
  const Eigen::VectorXd targets = apparent_flow_targets(ac);
  Recorder rec{flow_mismatch_objective(net, cold_start(net), targets), {}};
  TunerConfig cfg;
  Eigen::VectorXd x0(6);
  x0 << cold_start(net).b, Eigen::VectorXd::Zero(3);
  const MinimizeResult r = conjugate_gradient(rec.wrap(), x0, cfg);
  const double ratio = r.trace.records.back().loss / r.trace.records.front().loss;
  CHECK(ratio <= 0.1);
  // Regression baseline: the run reaches a ratio of about 6e-10.
  CHECK(ratio <= 1e-8);
  check_trace(r.trace);
  check_armijo(rec, r.trace, cfg.alpha1);

  const TuneResult t = tune(net, cold_start(net), targets);
  CHECK(t.params.gamma.isZero(0.0));
  CHECK(t.params.rho.isZero(0.0));
  CHECK(t.params.provenance == Provenance::tuned);
  CHECK(t.trace.records.back().loss == r.trace.records.back().loss);
}

TEST_CASE("tuning is deterministic") {
  const NetworkCase net = load_case(testing::case_path("case5_pjm"));
  const AcSolution ac = solve_ac_opf(net, Topology::all_in(net));
  REQUIRE(ac.converged);
  const Eigen::VectorXd targets = apparent_flow_targets(ac);
  const TuneResult a = tune(net, cold_start(net), targets);
  const TuneResult b = tune(net, cold_start(net), targets);
  CHECK(a.trace.to_csv() == b.trace.to_csv());
  CHECK(a.params.b == b.params.b);
  CHECK(a.params.psi == b.params.psi);
  check_trace(a.trace);
  CHECK(a.trace.to_csv().rfind("iter,loss,grad_norm,alpha,beta\n", 0) == 0);
}

TEST_CASE("analytic gradient matches central differences") {
  for (const std::string stem : {"case3_lmbd", "case5_pjm"}) {
    const NetworkCase net = load_case(testing::case_path(stem));
    const AcSolution ac = solve_ac_opf(net, Topology::all_in(net));
    REQUIRE(ac.converged);
    const testing::GradientCheck g = testing::check_gradient(net, cold_start(net), apparent_flow_targets(ac), 20, 99u);
    INFO(stem);
    CHECK(g.accepted == 20);
    CHECK(g.worst_relative_error < 1e-4);
  }
}
