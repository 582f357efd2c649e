#include <doctest.h>

#include <random>

#include "dcots/qp.hpp"
#include "test_support.hpp"

using namespace dcots;

namespace {

QpProblem to_sparse(const testing::DenseQp& d) {
  QpProblem p;
  p.H = d.H;
  p.c = d.c;
  p.E = d.A.sparseView();
  p.e = d.b;
  p.G = d.G.sparseView();
  p.h = d.h;
  return p;
}

/// Strictly convex QP whose inequality set is feasible around a random interior point.
testing::DenseQp random_qp(std::mt19937& rng, int n, int me, int mi) {
  std::normal_distribution<double> normal;
  auto rand_mat = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
    return m;
  };
  testing::DenseQp q;
  const Eigen::MatrixXd l = rand_mat(n, n);
  q.H = l * l.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  q.c = rand_mat(n, 1) * 5.0;
  q.A = rand_mat(me, n);
  const Eigen::VectorXd x_feas = rand_mat(n, 1);
  q.b = q.A * x_feas;
  q.G = rand_mat(mi, n);
  q.h = q.G * x_feas + rand_mat(mi, 1).cwiseAbs() * 0.5;
  return q;
}

}  // namespace

TEST_CASE("interior point matches active-set enumeration on random strictly convex QPs") {
  std::mt19937 rng(20240611);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + trial % 4;
    const int me = trial % 2;
    const int mi = 3 + trial % 5;
    const testing::DenseQp q = random_qp(rng, n, me, mi);
    const testing::DenseQpResult ref = testing::enumerate_active_sets(q);
    REQUIRE(ref.converged);
    const QpSolution sol = solve_qp(to_sparse(q));
    INFO("trial " << trial);
    REQUIRE(sol.status == QpStatus::optimal);
    CHECK((sol.x - ref.x).lpNorm<Eigen::Infinity>() < 1e-7);
    CHECK(sol.objective == doctest::Approx(ref.objective).epsilon(1e-9));

    // KKT residuals of the returned point.
    const Eigen::VectorXd stat = q.H * sol.x + q.c + q.A.transpose() * sol.y + q.G.transpose() * sol.z;
    CHECK(stat.lpNorm<Eigen::Infinity>() < 1e-8);
    if (me > 0) CHECK((q.A * sol.x - q.b).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((q.G * sol.x - q.h).maxCoeff() < 1e-8);
    CHECK(sol.z.minCoeff() > -1e-12);
    CHECK(sol.z.cwiseProduct(q.h - q.G * sol.x).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("dense reference interior point agrees with enumeration") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const testing::DenseQp q = random_qp(rng, 3, 1, 6);
    const auto a = testing::enumerate_active_sets(q);
    const auto b = testing::dense_ipm(q);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK(b.objective == doctest::Approx(a.objective).epsilon(1e-7));
  }
}

TEST_CASE("active set after polish") {
  // min (x-2)^2 + (y-2)^2 s.t. x + y <= 2, x <= 10  ->  x = y = 1, only the first row active.
  testing::DenseQp q;
  q.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  q.c = Eigen::Vector2d(-4, -4);
  q.A.resize(0, 2);
  q.b.resize(0);
  q.G.resize(2, 2);
  q.G << 1, 1, 1, 0;
  q.h = Eigen::Vector2d(2, 10);
  const QpSolution sol = solve_qp(to_sparse(q));
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(sol.polished);
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sol.x[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sol.active == std::vector<int>{0});
  CHECK(sol.z[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK_FALSE(sol.degenerate);
}

TEST_CASE("weakly active constraint raises the degeneracy flag") {
  // Unconstrained minimizer sits exactly on x <= 1.
  testing::DenseQp q;
  q.H = 2.0 * Eigen::MatrixXd::Identity(1, 1);
  q.c = Eigen::VectorXd::Constant(1, -2.0);
  q.A.resize(0, 1);
  q.b.resize(0);
  q.G = Eigen::MatrixXd::Ones(1, 1);
  q.h = Eigen::VectorXd::Ones(1);
  const QpSolution sol = solve_qp(to_sparse(q));
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(sol.x[0] == doctest::Approx(1.0));
  CHECK(sol.active.empty());
  CHECK(sol.degenerate);
}

TEST_CASE("linear objective with bounds") {
  // min -x - y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  ->  (1.6, 1.2).
  testing::DenseQp q;
  q.H = Eigen::MatrixXd::Zero(2, 2);
  q.c = Eigen::Vector2d(-1, -1);
  q.A.resize(0, 2);
  q.b.resize(0);
  q.G.resize(4, 2);
  q.G << 1, 2, 3, 1, -1, 0, 0, -1;
  q.h = Eigen::Vector4d(4, 6, 0, 0);
  const QpSolution sol = solve_qp(to_sparse(q));
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(sol.x[0] == doctest::Approx(1.6).epsilon(1e-9));
  CHECK(sol.x[1] == doctest::Approx(1.2).epsilon(1e-9));
  CHECK(sol.objective == doctest::Approx(-2.8).epsilon(1e-9));
}

TEST_CASE("infeasible constraints are reported") {
  testing::DenseQp q;
  q.H = Eigen::MatrixXd::Identity(1, 1);
  q.c = Eigen::VectorXd::Zero(1);
  q.A = Eigen::MatrixXd::Ones(1, 1);
  q.b = Eigen::VectorXd::Constant(1, 3.0);
  q.G = Eigen::MatrixXd::Ones(1, 1);
  q.h = Eigen::VectorXd::Constant(1, 1.0);
  const QpProblem p = to_sparse(q);
  const QpSolution sol = solve_qp(p);
  CHECK(sol.status == QpStatus::infeasible);
  CHECK(qp_infeasibility(p, Eigen::VectorXd::Constant(1, 1.0)) == doctest::Approx(2.0));
}
