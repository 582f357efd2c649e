#include <doctest.h>

#include <cmath>
#include <complex>

#include "dcots/ac_solver.hpp"
#include "dcots/dc_params.hpp"
#include "test_support.hpp"

using namespace dcots;

namespace {

NetworkCase lossy_two_bus() {
  return parse_case(testing::matpower_text({"1 3 0 0 0 0 1 1 0 230 1 1.1 0.9", "2 1 50 20 0 0 1 1 0 230 1 1.1 0.9"},
                                           {"1 50 0 100 -100 1 100 1 200 0"},
                                           {"1 2 0.1 0.3 0 200 0 0 0 0 1 -30 30"}, {"2 0 0 3 0 10 0"}));
}

AcSolution flat(const NetworkCase& net) {
  AcSolution s;
  s.v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(net.num_buses()));
  s.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_buses()));
  s.converged = true;
  s.status = AcStatus::converged;
  return s;
}

}  // namespace

TEST_CASE("cold start susceptances") {
  const NetworkCase one =
      parse_case(testing::matpower_text({"1 3 0 0 0 0 1 1 0 230 1 1.1 0.9", "2 1 50 0 0 0 1 1 0 230 1 1.1 0.9"},
                                        {"1 50 0 100 -100 1 100 1 200 0"}, {"1 2 0 0.5 0 200 0 0 0 0 1 -30 30"},
                                        {"2 0 0 3 0 10 0"}));
  CHECK(cold_start(one).b[0] == doctest::Approx(2.0));

  const NetworkCase lossy = lossy_two_bus();
  const DcParameters p = cold_start(lossy);
  CHECK(p.b[0] == doctest::Approx(3.0));
  CHECK(p.gamma.isZero(0.0));
  CHECK(p.rho.isZero(0.0));
  CHECK(p.psi.isZero(0.0));
  CHECK(p.provenance == Provenance::cold);

  for (const auto& stem : testing::small_cases()) {
    const NetworkCase net = load_case(testing::case_path(stem));
    CHECK(cold_start(net).b.minCoeff() > 0.0);
  }
}

TEST_CASE("hot start at a flat profile equals cold start") {
  const NetworkCase net = load_case(testing::case_path("case5_pjm"));
  const DcParameters hot = hot_start(net, flat(net));
  const DcParameters cold = cold_start(net);
  CHECK((hot.b - cold.b).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(hot.gamma.isZero(0.0));
  CHECK(hot.rho.isZero(0.0));
  CHECK(hot.provenance == Provenance::hot);
}

TEST_CASE("sinc factor at zero angle difference") {
  CHECK(sinc(0.0) == 1.0);
  CHECK(std::abs(sinc(1e-12) - sinc(0.0)) < 1e-9);
  CHECK(std::abs(sinc(-1e-12) - sinc(0.0)) < 1e-9);
  CHECK(sinc(0.3) == doctest::Approx(std::sin(0.3) / 0.3).epsilon(1e-15));
  CHECK(std::abs(sinc(0.99e-6) - std::sin(0.99e-6) / 0.99e-6) < 1e-15);

  const NetworkCase net = lossy_two_bus();
  AcSolution nominal = flat(net);
  nominal.v << 1.02, 0.97;
  const DcParameters p = hot_start(net, nominal);
  CHECK(p.b[0] == doctest::Approx(3.0 * 1.02 * 0.97).epsilon(1e-15));
  nominal.theta[1] = 1e-12;
  CHECK(std::abs(hot_start(net, nominal).b[0] - p.b[0]) < 1e-9);
}

TEST_CASE("hot start loss terms on a lossy line") {
  const NetworkCase net = lossy_two_bus();
  const AcSolution pf = newton_power_flow(net, Topology::all_in(net), default_setpoints(net));
  REQUIRE(pf.converged);
  const DcParameters p = hot_start(net, pf);

  const double v1 = pf.v[0], v2 = pf.v[1], d = pf.theta[0] - pf.theta[1];
  // Re(1 / (0.1 + 0.3j)) = 1.
  const double from_loss = v1 * (v1 - v2 * std::cos(d));
  CHECK(p.gamma[0] == doctest::Approx(from_loss).epsilon(1e-12));
  CHECK(p.rho[0] == doctest::Approx(from_loss).epsilon(1e-12));

  // Both ends together carry the series I^2 r loss.
  const std::complex<double> vf = std::polar(v1, pf.theta[0]), vt = std::polar(v2, pf.theta[1]);
  const std::complex<double> current = (vf - vt) / std::complex<double>(0.1, 0.3);
  CHECK(p.gamma.sum() == doctest::Approx(std::norm(current) * 0.1).epsilon(1e-12));
  CHECK(p.gamma.sum() > 0.0);
}

TEST_CASE("with_tuned replaces b and psi only") {
  const NetworkCase net = load_case(testing::case_path("case3_lmbd"));
  const DcParameters cold = cold_start(net);
  const DcParameters same = with_tuned(cold, cold.b, Eigen::VectorXd::Zero(cold.b.size()));
  CHECK(same.b == cold.b);
  CHECK(same.psi.isZero(0.0));
  CHECK(same.provenance == Provenance::tuned);

  AcSolution nominal = flat(net);
  nominal.v << 1.05, 1.0, 0.98;
  nominal.theta << 0.0, -0.05, 0.02;
  const DcParameters hot = hot_start(net, nominal);
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(3);
  psi[1] = 0.25;
  const DcParameters tuned = with_tuned(hot, cold.b, psi);
  CHECK(tuned.gamma.isZero(0.0));
  CHECK(tuned.rho.isZero(0.0));
  CHECK(tuned.b == cold.b);
  CHECK(tuned.psi == psi);

  CHECK_THROWS_AS(with_tuned(cold, Eigen::VectorXd::Ones(2), psi), std::invalid_argument);
}

TEST_CASE("parameters round-trip through JSON") {
  const NetworkCase net = load_case(testing::case_path("case14_ieee"));
  AcSolution nominal = flat(net);
  nominal.theta.setLinSpaced(0.0, -0.2);
  const DcParameters p = hot_start(net, nominal);
  const DcParameters back = dc_parameters_from_json(to_json(p));
  CHECK(back.b == p.b);
  CHECK(back.gamma == p.gamma);
  CHECK(back.rho == p.rho);
  CHECK(back.psi == p.psi);
  CHECK(back.provenance == p.provenance);
}
