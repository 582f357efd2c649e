// SPDX-License-Identifier: BSD-2-Clause
#include "dcots/dc_opf.hpp"

#include <cmath>
#include <numbers>

namespace dcots {

namespace {

constexpr double kAngleLimitInactive = 2.0 * std::numbers::pi - 1e-9;
constexpr double kFixedGenTol = 1e-12;
constexpr double kTikhonov = 1e-8;

using Triplets = std::vector<Eigen::Triplet<double>>;

bool angle_limit_active(double limit) { return std::abs(limit) < kAngleLimitInactive; }

/// Row e of the incidence matrix as a dense bus vector.
Eigen::VectorXd incidence_row(const NetworkCase& net, std::size_t e) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_buses()));
  a[static_cast<Eigen::Index>(net.from_position(e))] += 1.0;
  a[static_cast<Eigen::Index>(net.to_position(e))] -= 1.0;
  return a;
}

}  // namespace

const char* to_string(DcOpfMode mode) { return mode == DcOpfMode::model4 ? "model4" : "model6-inner"; }

QpProblem build_dc_opf_qp(const NetworkCase& net, const DcParameters& params, DcOpfMode mode,
                          const DcOpfOptions& options, DcLayout* layout_out) {
  params.validate(net);
  const auto nb = static_cast<int>(net.num_buses());
  const auto ng = static_cast<int>(net.num_generators());
  const auto ne = static_cast<int>(net.num_branches());
  const int n = ng + nb;
  const bool inner = mode == DcOpfMode::model6_inner;
  auto th = [ng](int i) { return ng + i; };

  DcLayout layout;
  layout.num_gens = ng;
  layout.num_buses = nb;

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.c = Eigen::VectorXd::Zero(n);
  for (int g = 0; g < ng; ++g) {
    const auto& gen = net.generators()[static_cast<std::size_t>(g)];
    qp.H(g, g) = 2.0 * gen.c2;
    qp.c[g] = gen.c1;
    if (std::abs(gen.p_max - gen.p_min) <= kFixedGenTol) layout.fixed_generators.push_back(g);
  }

  // Balance: C pg - A' diag(b) A theta = pd + gamma + A' rho (model4); pd (model6_inner).
  const int me = nb + 1 + static_cast<int>(layout.fixed_generators.size());
  Triplets eq;
  qp.e = Eigen::VectorXd::Zero(me);
  for (int g = 0; g < ng; ++g) eq.emplace_back(static_cast<int>(net.gen_position(static_cast<std::size_t>(g))), g, 1.0);
  for (int e = 0; e < ne; ++e) {
    const auto f = static_cast<int>(net.from_position(static_cast<std::size_t>(e)));
    const auto t = static_cast<int>(net.to_position(static_cast<std::size_t>(e)));
    const double b = params.b[e];
    eq.emplace_back(f, th(f), -b);
    eq.emplace_back(f, th(t), b);
    eq.emplace_back(t, th(t), -b);
    eq.emplace_back(t, th(f), b);
    if (!inner) {
      qp.e[f] += params.rho[e];
      qp.e[t] -= params.rho[e];
    }
  }
  for (int i = 0; i < nb; ++i) {
    qp.e[i] += net.buses()[static_cast<std::size_t>(i)].p_demand;
    if (!inner) qp.e[i] += params.gamma[i];
  }
  eq.emplace_back(nb, th(static_cast<int>(net.slack_position())), 1.0);
  for (std::size_t k = 0; k < layout.fixed_generators.size(); ++k) {
    const int g = layout.fixed_generators[k];
    eq.emplace_back(nb + 1 + static_cast<int>(k), g, 1.0);
    qp.e[nb + 1 + static_cast<int>(k)] = net.generators()[static_cast<std::size_t>(g)].p_min;
  }
  qp.E.resize(me, n);
  qp.E.setFromTriplets(eq.begin(), eq.end());

  Triplets ineq;
  std::vector<double> rhs;
  auto add_row = [&](DcRowKind kind, int index, std::initializer_list<std::pair<int, double>> coeffs, double bound) {
    const auto row = static_cast<int>(layout.rows.size());
    for (const auto& [col, v] : coeffs) ineq.emplace_back(row, col, v);
    rhs.push_back(bound);
    layout.rows.push_back({kind, index});
  };

  for (int e = 0; e < ne; ++e) {
    const auto& br = net.branches()[static_cast<std::size_t>(e)];
    const auto f = static_cast<int>(net.from_position(static_cast<std::size_t>(e)));
    const auto t = static_cast<int>(net.to_position(static_cast<std::size_t>(e)));
    const double b = params.b[e];
    const double offset = inner ? params.psi[e] : params.rho[e];
    add_row(DcRowKind::thermal_upper, e, {{th(f), b}, {th(t), -b}}, br.rate_a - offset);
    add_row(DcRowKind::thermal_lower, e, {{th(f), -b}, {th(t), b}}, br.rate_a + offset);
  }
  for (int e = 0; e < ne; ++e) {
    const auto& br = net.branches()[static_cast<std::size_t>(e)];
    const auto f = static_cast<int>(net.from_position(static_cast<std::size_t>(e)));
    const auto t = static_cast<int>(net.to_position(static_cast<std::size_t>(e)));
    if (angle_limit_active(br.ang_max)) add_row(DcRowKind::angle_upper, e, {{th(f), 1.0}, {th(t), -1.0}}, br.ang_max);
    if (angle_limit_active(br.ang_min)) add_row(DcRowKind::angle_lower, e, {{th(f), -1.0}, {th(t), 1.0}}, -br.ang_min);
  }
  if (inner) {
    for (int i = 0; i < nb; ++i) {
      if (i == static_cast<int>(net.slack_position())) continue;
      add_row(DcRowKind::theta_upper, i, {{th(i), 1.0}}, options.theta_box);
      add_row(DcRowKind::theta_lower, i, {{th(i), -1.0}}, options.theta_box);
    }
  }
  for (int g = 0; g < ng; ++g) {
    const auto& gen = net.generators()[static_cast<std::size_t>(g)];
    if (std::abs(gen.p_max - gen.p_min) <= kFixedGenTol) continue;
    add_row(DcRowKind::pg_upper, g, {{g, 1.0}}, gen.p_max);
    add_row(DcRowKind::pg_lower, g, {{g, -1.0}}, -gen.p_min);
  }
  qp.G.resize(static_cast<Eigen::Index>(layout.rows.size()), n);
  qp.G.setFromTriplets(ineq.begin(), ineq.end());
  qp.h = Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));

  if (layout_out) *layout_out = std::move(layout);
  return qp;
}

DcOpfSolution solve_dc_opf(const NetworkCase& net, const DcParameters& params, DcOpfMode mode,
                           const DcOpfOptions& options) {
  DcOpfSolution sol;
  sol.mode = mode;
  const QpProblem qp = build_dc_opf_qp(net, params, mode, options, &sol.layout);
  const QpSolution res = solve_qp(qp, options.qp);
  if (res.status == QpStatus::infeasible)
    throw DcOpfInfeasible("DC-OPF infeasible (primal residual " + std::to_string(res.primal_residual) + ")",
                          res.primal_residual);
  if (res.status != QpStatus::optimal)
    throw std::runtime_error("DC-OPF did not converge in " + std::to_string(res.iterations) + " iterations");

  const auto ng = static_cast<Eigen::Index>(net.num_generators());
  const auto nb = static_cast<Eigen::Index>(net.num_buses());
  sol.p_gen = res.x.head(ng);
  sol.theta = res.x.tail(nb);
  sol.p_flow = params.b.cwiseProduct(net.incidence() * sol.theta);
  if (mode == DcOpfMode::model4) sol.p_flow += params.rho;
  sol.s_flow_dc = sol.p_flow + params.psi;
  sol.eq_duals = res.y;
  sol.ineq_duals = res.z;
  sol.active_set = res.active;
  sol.degenerate = res.degenerate;
  sol.iterations = res.iterations;
  sol.objective = net.dispatch_cost(sol.p_gen);
  sol.balance_residual = (qp.E * res.x - qp.e).head(nb).lpNorm<Eigen::Infinity>();
  return sol;
}

SensitivityBundle differentiate_kkt(const NetworkCase& net, const DcParameters& params, const DcOpfSolution& sol,
                                    const DcOpfOptions& options) {
  DcLayout layout;
  const QpProblem qp = build_dc_opf_qp(net, params, sol.mode, options, &layout);
  const auto ng = static_cast<Eigen::Index>(net.num_generators());
  const auto nb = static_cast<Eigen::Index>(net.num_buses());
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  const Eigen::Index n = ng + nb;
  const Eigen::Index me = qp.E.rows();
  const auto ma = static_cast<Eigen::Index>(sol.active_set.size());
  const Eigen::Index dim = n + me + ma;
  const bool inner = sol.mode == DcOpfMode::model6_inner;

  // K = [H E' Ga'; E 0 0; Ga 0 0]
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
  kkt.topLeftCorner(n, n) = qp.H;
  const Eigen::MatrixXd ed = qp.E;
  kkt.block(0, n, n, me) = ed.transpose();
  kkt.block(n, 0, me, n) = ed;
  const Eigen::SparseMatrix<double, Eigen::RowMajor> g_rows = qp.G;
  for (Eigen::Index k = 0; k < ma; ++k) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(g_rows, sol.active_set[static_cast<std::size_t>(k)]);
         it; ++it) {
      kkt(n + me + k, it.col()) = it.value();
      kkt(it.col(), n + me + k) = it.value();
    }
  }

  // Active thermal rows per branch, with their multipliers.
  std::vector<Eigen::Index> upper_pos(static_cast<std::size_t>(ne), -1), lower_pos(static_cast<std::size_t>(ne), -1);
  for (Eigen::Index k = 0; k < ma; ++k) {
    const int row = sol.active_set[static_cast<std::size_t>(k)];
    const DcRow& r = layout.rows[static_cast<std::size_t>(row)];
    if (r.kind == DcRowKind::thermal_upper) upper_pos[static_cast<std::size_t>(r.index)] = k;
    if (r.kind == DcRowKind::thermal_lower) lower_pos[static_cast<std::size_t>(r.index)] = k;
  }
  auto active_dual = [&](Eigen::Index k) {
    return k < 0 ? 0.0 : sol.ineq_duals[sol.active_set[static_cast<std::size_t>(k)]];
  };

  // Right-hand sides: minus the parameter derivative of the KKT residual.
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dim, 2 * ne);
  const Eigen::VectorXd y_bal = sol.eq_duals.head(nb);
  for (Eigen::Index e = 0; e < ne; ++e) {
    const Eigen::VectorXd a = incidence_row(net, static_cast<std::size_t>(e));
    const double a_theta = a.dot(sol.theta);
    const double a_y = a.dot(y_bal);
    const auto up = upper_pos[static_cast<std::size_t>(e)];
    const auto lo = lower_pos[static_cast<std::size_t>(e)];
    // b_e column.
    rhs.col(e).segment(ng, nb) = a * a_y - (active_dual(up) - active_dual(lo)) * a;
    rhs.col(e).segment(n, nb) = a * a_theta;
    if (up >= 0) rhs(n + me + up, e) = -a_theta;
    if (lo >= 0) rhs(n + me + lo, e) = a_theta;
    // psi_e column.
    if (inner) {
      if (up >= 0) rhs(n + me + up, ne + e) = -1.0;
      if (lo >= 0) rhs(n + me + lo, ne + e) = 1.0;
    }
  }

  SensitivityBundle out;
  out.degenerate = sol.degenerate;
  if (sol.degenerate) out.warning = "weakly active inequality excluded from the active set";
  Eigen::MatrixXd d;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (lu.isInvertible()) {
    d = lu.solve(rhs);
  } else {
    out.degenerate = true;
    if (!out.warning.empty()) out.warning += "; ";
    out.warning += "singular KKT matrix, Tikhonov-regularized solve";
    Eigen::MatrixXd normal = kkt.transpose() * kkt;
    normal.diagonal().array() += kTikhonov;
    d = normal.ldlt().solve(kkt.transpose() * rhs);
  }

  out.d_theta_d_b = d.block(ng, 0, nb, ne);
  out.d_theta_d_psi = d.block(ng, ne, nb, ne);
  const Eigen::MatrixXd a_dense = net.incidence();
  const Eigen::MatrixXd ba = params.b.asDiagonal() * a_dense;
  out.d_flow_d_b = Eigen::MatrixXd((a_dense * sol.theta).asDiagonal()) + ba * out.d_theta_d_b;
  out.d_flow_d_psi = Eigen::MatrixXd::Identity(ne, ne) + ba * out.d_theta_d_psi;
  return out;
}

double loss(const Eigen::VectorXd& s_flow_dc, const Eigen::VectorXd& s_flow_ac) {
  if (s_flow_dc.size() != s_flow_ac.size()) throw std::invalid_argument("loss: flow vectors differ in length");
  if (s_flow_dc.size() == 0) return 0.0;
  return (s_flow_dc - s_flow_ac).squaredNorm() / static_cast<double>(s_flow_dc.size());
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> loss_gradients(const SensitivityBundle& bundle,
                                                           const Eigen::VectorXd& s_flow_dc,
                                                           const Eigen::VectorXd& s_flow_ac) {
  const Eigen::VectorXd r = (2.0 / static_cast<double>(s_flow_dc.size())) * (s_flow_dc - s_flow_ac);
  return {bundle.d_flow_d_b.transpose() * r, bundle.d_flow_d_psi.transpose() * r};
}

nlohmann::json to_json(const DcOpfSolution& sol) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"mode", to_string(sol.mode)},
          {"objective", sol.objective},
          {"p_gen", vec(sol.p_gen)},
          {"theta", vec(sol.theta)},
          {"p_flow", vec(sol.p_flow)},
          {"s_flow_dc", vec(sol.s_flow_dc)},
          {"eq_duals", vec(sol.eq_duals)},
          {"ineq_duals", vec(sol.ineq_duals)},
          {"active_set", sol.active_set},
          {"iterations", sol.iterations},
          {"degenerate", sol.degenerate}};
}

}  // namespace dcots
