#include "dcots/ac_solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "ac_model.hpp"
#include "interior_point.hpp"

namespace dcots {

using detail::BranchCoeffs;
using detail::FlowCoeffs;
using detail::LocalFlow;

// ---------------------------------------------------------------------------
// Topology

Topology Topology::all_in(const NetworkCase& net) { return Topology{std::vector<bool>(net.num_branches(), true)}; }

Topology Topology::with_open(const NetworkCase& net, const std::vector<int>& opened) {
  Topology t = all_in(net);
  for (int line : opened) {
    if (line < 1 || static_cast<std::size_t>(line) > net.num_branches())
      throw std::out_of_range("line " + std::to_string(line) + " out of range 1.." +
                              std::to_string(net.num_branches()));
    t.in_service[static_cast<std::size_t>(line - 1)] = false;
  }
  return t;
}

std::vector<int> Topology::opened_lines() const {
  std::vector<int> out;
  for (std::size_t e = 0; e < in_service.size(); ++e)
    if (!in_service[e]) out.push_back(static_cast<int>(e) + 1);
  return out;
}

namespace {

std::vector<bool> buses_with_generation(const NetworkCase& net) {
  std::vector<bool> has(net.num_buses(), false);
  for (std::size_t g = 0; g < net.num_generators(); ++g) has[net.gen_position(g)] = true;
  return has;
}

std::vector<bool> buses_with_real_capacity(const NetworkCase& net) {
  std::vector<bool> has(net.num_buses(), false);
  for (std::size_t g = 0; g < net.num_generators(); ++g)
    if (net.generators()[g].p_max > 0.0) has[net.gen_position(g)] = true;
  return has;
}

void check_topology_size(const NetworkCase& net, const Topology& topology) {
  if (topology.size() != net.num_branches())
    throw std::invalid_argument("topology has " + std::to_string(topology.size()) + " entries, case has " +
                                std::to_string(net.num_branches()) + " branches");
}

}  // namespace

bool islands_load_or_generation(const NetworkCase& net, const Topology& topology) {
  check_topology_size(net, topology);
  const auto comp = slack_component(net, topology.in_service);
  const auto gen = buses_with_real_capacity(net);
  for (std::size_t i = 0; i < net.num_buses(); ++i) {
    if (comp[i]) continue;
    const auto& bus = net.buses()[i];
    if (bus.p_demand != 0.0 || bus.q_demand != 0.0 || gen[i]) return true;
  }
  return false;
}

void require_no_islanding(const NetworkCase& net, const Topology& topology) {
  if (islands_load_or_generation(net, topology)) {
    std::string lines;
    for (int l : topology.opened_lines()) lines += (lines.empty() ? "" : ",") + std::to_string(l);
    throw IslandingError("topology with lines {" + lines + "} open islands load or generation");
  }
}

const char* to_string(AcStatus status) {
  switch (status) {
    case AcStatus::converged: return "converged";
    case AcStatus::infeasible: return "infeasible";
    case AcStatus::max_iter: return "max_iter";
    case AcStatus::failed: return "failed";
  }
  return "failed";
}

// ---------------------------------------------------------------------------
// Flows

std::pair<std::complex<double>, std::complex<double>> branch_flows(const NetworkCase& net, std::size_t e,
                                                                   const Eigen::VectorXd& v,
                                                                   const Eigen::VectorXd& theta) {
  const auto k = detail::branch_coeffs(net.branches()[e]);
  const auto f = static_cast<Eigen::Index>(net.from_position(e));
  const auto t = static_cast<Eigen::Index>(net.to_position(e));
  const std::complex<double> sf{detail::flow_value(k.p_from, theta[f], theta[t], v[f], v[t]),
                                detail::flow_value(k.q_from, theta[f], theta[t], v[f], v[t])};
  const std::complex<double> st{detail::flow_value(k.p_to, theta[t], theta[f], v[t], v[f]),
                                detail::flow_value(k.q_to, theta[t], theta[f], v[t], v[f])};
  return {sf, st};
}

namespace {

void fill_flows(const NetworkCase& net, const Topology& topology, AcSolution& sol) {
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  sol.s_from = Eigen::VectorXcd::Zero(ne);
  sol.s_to = Eigen::VectorXcd::Zero(ne);
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    if (!topology.in_service[e]) continue;
    auto [sf, st] = branch_flows(net, e, sol.v, sol.theta);
    sol.s_from[static_cast<Eigen::Index>(e)] = sf;
    sol.s_to[static_cast<Eigen::Index>(e)] = st;
  }
}

}  // namespace

Eigen::VectorXcd nodal_mismatch(const NetworkCase& net, const Topology& topology, const AcSolution& sol) {
  check_topology_size(net, topology);
  const auto nb = static_cast<Eigen::Index>(net.num_buses());
  Eigen::VectorXcd mis = Eigen::VectorXcd::Zero(nb);
  for (Eigen::Index i = 0; i < nb; ++i) {
    const auto& bus = net.buses()[static_cast<std::size_t>(i)];
    const double v2 = sol.v[i] * sol.v[i];
    mis[i] = std::complex<double>(-bus.p_demand - bus.shunt_g * v2, -bus.q_demand + bus.shunt_b * v2);
  }
  for (std::size_t g = 0; g < net.num_generators(); ++g) {
    const auto i = static_cast<Eigen::Index>(net.gen_position(g));
    const auto gi = static_cast<Eigen::Index>(g);
    mis[i] += std::complex<double>(sol.p_gen[gi], sol.q_gen[gi]);
  }
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    if (!topology.in_service[e]) continue;
    auto [sf, st] = branch_flows(net, e, sol.v, sol.theta);
    mis[static_cast<Eigen::Index>(net.from_position(e))] -= sf;
    mis[static_cast<Eigen::Index>(net.to_position(e))] -= st;
  }
  return mis;
}

// ---------------------------------------------------------------------------
// Newton-Raphson power flow

PowerFlowSetpoints default_setpoints(const NetworkCase& net) {
  PowerFlowSetpoints sp;
  sp.p_gen.resize(static_cast<Eigen::Index>(net.num_generators()));
  sp.v_set = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(net.num_buses()));
  for (std::size_t g = 0; g < net.num_generators(); ++g) {
    const auto& gen = net.generators()[g];
    sp.p_gen[static_cast<Eigen::Index>(g)] = gen.p_set;
    sp.v_set[static_cast<Eigen::Index>(net.gen_position(g))] = gen.v_set;
  }
  return sp;
}

PowerFlowSetpoints setpoints_from(const NetworkCase& net, const AcSolution& sol) {
  if (sol.v.size() != static_cast<Eigen::Index>(net.num_buses()) ||
      sol.p_gen.size() != static_cast<Eigen::Index>(net.num_generators()))
    throw std::invalid_argument("setpoints_from: solution does not match the case");
  return {sol.p_gen, sol.v};
}

AcSolution newton_power_flow(const NetworkCase& net, const Topology& topology, const PowerFlowSetpoints& sp,
                             const PowerFlowOptions& options) {
  check_topology_size(net, topology);
  require_no_islanding(net, topology);
  const auto nb = net.num_buses();
  const auto ng = net.num_generators();
  if (sp.p_gen.size() != static_cast<Eigen::Index>(ng) || sp.v_set.size() != static_cast<Eigen::Index>(nb))
    throw std::invalid_argument("newton_power_flow: setpoint length mismatch");

  const auto active = slack_component(net, topology.in_service);
  const auto has_gen = buses_with_generation(net);
  const std::size_t slack = net.slack_position();

  // Unknown layout: theta for active non-slack buses, then v for active PQ buses.
  std::vector<Eigen::Index> theta_idx(nb, -1), v_idx(nb, -1);
  Eigen::Index nx = 0;
  for (std::size_t i = 0; i < nb; ++i)
    if (active[i] && i != slack) theta_idx[i] = nx++;
  for (std::size_t i = 0; i < nb; ++i)
    if (active[i] && i != slack && !has_gen[i]) v_idx[i] = nx++;

  AcSolution sol;
  sol.v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(nb));
  sol.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nb));
  for (std::size_t i = 0; i < nb; ++i)
    if (active[i] && (i == slack || has_gen[i])) sol.v[static_cast<Eigen::Index>(i)] = sp.v_set[static_cast<Eigen::Index>(i)];

  Eigen::VectorXd p_sched = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nb));
  Eigen::VectorXd q_sched = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nb));
  for (std::size_t i = 0; i < nb; ++i) {
    p_sched[static_cast<Eigen::Index>(i)] = -net.buses()[i].p_demand;
    q_sched[static_cast<Eigen::Index>(i)] = -net.buses()[i].q_demand;
  }
  for (std::size_t g = 0; g < ng; ++g)
    if (active[net.gen_position(g)]) p_sched[static_cast<Eigen::Index>(net.gen_position(g))] += sp.p_gen[static_cast<Eigen::Index>(g)];

  std::vector<BranchCoeffs> coeffs;
  coeffs.reserve(net.num_branches());
  for (const auto& br : net.branches()) coeffs.push_back(detail::branch_coeffs(br));

  // Net injection leaving each bus through shunts and branches, with Jacobian.
  auto evaluate = [&](Eigen::VectorXd& p_out, Eigen::VectorXd& q_out, Eigen::MatrixXd* jac) {
    p_out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nb));
    q_out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nb));
    if (jac) jac->setZero(nx, nx);
    // Row of bus i: P rows use theta_idx, Q rows use v_idx.
    auto add_grad = [&](Eigen::Index row, const Eigen::Vector4d& grad, std::size_t bi, std::size_t bj) {
      if (!jac || row < 0) return;
      const Eigen::Index cols[4] = {theta_idx[bi], theta_idx[bj], v_idx[bi], v_idx[bj]};
      for (int k = 0; k < 4; ++k)
        if (cols[k] >= 0) (*jac)(row, cols[k]) += grad[k];
    };
    for (std::size_t i = 0; i < nb; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto& bus = net.buses()[i];
      const double vi = sol.v[ii];
      p_out[ii] = bus.shunt_g * vi * vi;
      q_out[ii] = -bus.shunt_b * vi * vi;
      if (jac && v_idx[i] >= 0) {
        if (theta_idx[i] >= 0) (*jac)(theta_idx[i], v_idx[i]) += 2.0 * bus.shunt_g * vi;
        (*jac)(v_idx[i], v_idx[i]) += -2.0 * bus.shunt_b * vi;
      }
    }
    for (std::size_t e = 0; e < net.num_branches(); ++e) {
      if (!topology.in_service[e]) continue;
      const std::size_t f = net.from_position(e), t = net.to_position(e);
      const auto fi = static_cast<Eigen::Index>(f), ti = static_cast<Eigen::Index>(t);
      const auto& k = coeffs[e];
      const LocalFlow pf = detail::local_flow(k.p_from, sol.theta[fi], sol.theta[ti], sol.v[fi], sol.v[ti], false);
      const LocalFlow qf = detail::local_flow(k.q_from, sol.theta[fi], sol.theta[ti], sol.v[fi], sol.v[ti], false);
      const LocalFlow pt = detail::local_flow(k.p_to, sol.theta[ti], sol.theta[fi], sol.v[ti], sol.v[fi], false);
      const LocalFlow qt = detail::local_flow(k.q_to, sol.theta[ti], sol.theta[fi], sol.v[ti], sol.v[fi], false);
      p_out[fi] += pf.value;
      q_out[fi] += qf.value;
      p_out[ti] += pt.value;
      q_out[ti] += qt.value;
      add_grad(theta_idx[f], pf.grad, f, t);
      add_grad(v_idx[f], qf.grad, f, t);
      add_grad(theta_idx[t], pt.grad, t, f);
      add_grad(v_idx[t], qt.grad, t, f);
    }
  };

  Eigen::VectorXd p_out, q_out;
  Eigen::MatrixXd jac;
  Eigen::VectorXd residual(nx);
  auto fill_residual = [&]() {
    for (std::size_t i = 0; i < nb; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (theta_idx[i] >= 0) residual[theta_idx[i]] = p_out[ii] - p_sched[ii];
      if (v_idx[i] >= 0) residual[v_idx[i]] = q_out[ii] - q_sched[ii];
    }
    return nx == 0 ? 0.0 : residual.lpNorm<Eigen::Infinity>();
  };

  evaluate(p_out, q_out, &jac);
  double norm = fill_residual();
  int iter = 0;
  while (norm > options.tolerance && iter < options.max_iter) {
    ++iter;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible())
      throw SingularJacobianError("power-flow Jacobian is singular at iteration " + std::to_string(iter));
    const Eigen::VectorXd dx = lu.solve(-residual);
    for (std::size_t i = 0; i < nb; ++i) {
      if (theta_idx[i] >= 0) sol.theta[static_cast<Eigen::Index>(i)] += dx[theta_idx[i]];
      if (v_idx[i] >= 0) sol.v[static_cast<Eigen::Index>(i)] += dx[v_idx[i]];
    }
    evaluate(p_out, q_out, &jac);
    norm = fill_residual();
    if (!std::isfinite(norm)) break;
  }

  // Dispatch: setpoints everywhere, the slack absorbs the P balance, and
  // generator buses share their reactive requirement equally.
  sol.p_gen = sp.p_gen;
  sol.q_gen = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ng));
  std::vector<std::vector<std::size_t>> gens_at(nb);
  for (std::size_t g = 0; g < ng; ++g) {
    if (active[net.gen_position(g)]) gens_at[net.gen_position(g)].push_back(g);
    else sol.p_gen[static_cast<Eigen::Index>(g)] = 0.0;
  }
  for (std::size_t i = 0; i < nb; ++i) {
    if (gens_at[i].empty()) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    const double q_need = q_out[ii] + net.buses()[i].q_demand;
    for (std::size_t g : gens_at[i]) sol.q_gen[static_cast<Eigen::Index>(g)] = q_need / static_cast<double>(gens_at[i].size());
    if (i == slack) {
      double others = 0.0;
      for (std::size_t k = 1; k < gens_at[i].size(); ++k) others += sp.p_gen[static_cast<Eigen::Index>(gens_at[i][k])];
      sol.p_gen[static_cast<Eigen::Index>(gens_at[i].front())] = p_out[ii] + net.buses()[i].p_demand - others;
    }
  }

  fill_flows(net, topology, sol);
  sol.iterations = iter;
  sol.kkt_residual = norm;
  sol.converged = std::isfinite(norm) && norm <= options.tolerance;
  sol.status = sol.converged ? AcStatus::converged : AcStatus::max_iter;
  sol.objective = net.dispatch_cost(sol.p_gen);
  return sol;
}

// ---------------------------------------------------------------------------
// AC-OPF

namespace {

constexpr double kAngleLimitInactive = 2.0 * std::numbers::pi - 1e-9;
constexpr double kElasticWeight = 1.0;
// Largest voltage-bound relaxation the elastic problem may use; keeps it away
// from the collapsed low-voltage branch of the power-flow equations.
constexpr double kVoltageRelaxCap = 0.4;

/// AC-OPF restricted to the in-service branches. Variables are
/// [theta (nb), v (nb), p_gen (ng), q_gen (ng)] followed, in elastic mode, by
/// quadratically penalized slacks on balance, thermal, angle and voltage constraints.
class AcOpfNlp final : public detail::Nlp {
 public:
  AcOpfNlp(const NetworkCase& net, const Topology& topology, bool elastic)
      : net_(net), topo_(topology), elastic_(elastic) {
    nb_ = static_cast<Eigen::Index>(net.num_buses());
    ng_ = static_cast<Eigen::Index>(net.num_generators());
    active_ = slack_component(net, topology.in_service);
    for (const auto& br : net.branches()) coeffs_.push_back(detail::branch_coeffs(br));

    for (std::size_t e = 0; e < net.num_branches(); ++e) {
      if (!topology.in_service[e]) continue;
      const auto& br = net.branches()[e];
      if (br.rate_a > 0.0) thermal_.push_back(e);
      if (br.ang_max < kAngleLimitInactive) angle_upper_.push_back(e);
      if (br.ang_min > -kAngleLimitInactive) angle_lower_.push_back(e);
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = net.generators()[static_cast<std::size_t>(g)];
      if (!active_[net.gen_position(static_cast<std::size_t>(g))]) {
        // Units stranded on a dead island stay off.
        p_fixed_.emplace_back(g, 0.0);
        q_fixed_.emplace_back(g, 0.0);
        continue;
      }
      if (std::abs(gen.p_max - gen.p_min) < 1e-12) p_fixed_.emplace_back(g, gen.p_min);
      if (std::abs(gen.q_max - gen.q_min) < 1e-12) q_fixed_.emplace_back(g, gen.q_min);
    }
    n_core_ = 2 * nb_ + 2 * ng_;
    n_ = n_core_;
    if (elastic_) {
      slack_p_ = n_;
      n_ += 2 * nb_;  // free P and Q balance slacks
      slack_thermal_ = n_;
      n_ += static_cast<Eigen::Index>(thermal_.size());
      slack_angle_ = n_;
      n_ += static_cast<Eigen::Index>(net.num_branches());
      slack_volt_ = n_;
      n_ += nb_;
    }
  }

  Eigen::Index num_vars() const override { return n_; }

  Eigen::Index theta(Eigen::Index i) const { return i; }
  Eigen::Index vm(Eigen::Index i) const { return nb_ + i; }
  Eigen::Index pg(Eigen::Index g) const { return 2 * nb_ + g; }
  Eigen::Index qg(Eigen::Index g) const { return 2 * nb_ + ng_ + g; }

  Eigen::VectorXd initial_point() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index i = 0; i < nb_; ++i) {
      const auto& bus = net_.buses()[static_cast<std::size_t>(i)];
      x[vm(i)] = active_[static_cast<std::size_t>(i)] ? 0.5 * (bus.v_min + bus.v_max) : 1.0;
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = net_.generators()[static_cast<std::size_t>(g)];
      x[pg(g)] = 0.5 * (gen.p_min + gen.p_max);
      x[qg(g)] = (std::isfinite(gen.q_min) && std::isfinite(gen.q_max)) ? 0.5 * (gen.q_min + gen.q_max) : 0.0;
    }
    return x;
  }

  void evaluate(const Eigen::VectorXd& x, detail::NlpPoint& out) const override {
    // Objective.
    out.df = Eigen::VectorXd::Zero(n_);
    out.f = 0.0;
    if (elastic_) {
      for (Eigen::Index k = n_core_; k < n_; ++k) {
        out.f += kElasticWeight * x[k] * x[k];
        out.df[k] = 2.0 * kElasticWeight * x[k];
      }
    } else {
      for (Eigen::Index g = 0; g < ng_; ++g) {
        const auto& gen = net_.generators()[static_cast<std::size_t>(g)];
        out.f += gen.cost(x[pg(g)]);
        out.df[pg(g)] = 2.0 * gen.c2 * x[pg(g)] + gen.c1;
      }
    }

    const Eigen::Index neq = 2 * nb_ + 1 + static_cast<Eigen::Index>(p_fixed_.size() + q_fixed_.size());
    out.g = Eigen::VectorXd::Zero(neq);
    out.dg = Eigen::MatrixXd::Zero(neq, n_);
    balance_rows(x, out.g, out.dg);
    Eigen::Index row = 2 * nb_;
    const auto slack = static_cast<Eigen::Index>(net_.slack_position());
    out.g[row] = x[theta(slack)];
    out.dg(row, theta(slack)) = 1.0;
    ++row;
    for (const auto& [g, value] : p_fixed_) {
      out.g[row] = x[pg(g)] - value;
      out.dg(row, pg(g)) = 1.0;
      ++row;
    }
    for (const auto& [g, value] : q_fixed_) {
      out.g[row] = x[qg(g)] - value;
      out.dg(row, qg(g)) = 1.0;
      ++row;
    }

    inequality_rows(x, out.h, out.dh);
  }

  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& lam, const Eigen::VectorXd& mu,
                                     double cost_mult) const override {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n_, n_);
    if (!elastic_) {
      for (Eigen::Index g = 0; g < ng_; ++g)
        h(pg(g), pg(g)) += cost_mult * 2.0 * net_.generators()[static_cast<std::size_t>(g)].c2;
    } else {
      for (Eigen::Index k = n_core_; k < n_; ++k) h(k, k) += cost_mult * 2.0 * kElasticWeight;
    }
    // Balance rows: -sum of end flows, -gs v^2 (P) and +bs v^2 (Q).
    for (Eigen::Index i = 0; i < nb_; ++i) {
      if (!active_[static_cast<std::size_t>(i)]) continue;
      const auto& bus = net_.buses()[static_cast<std::size_t>(i)];
      h(vm(i), vm(i)) += -2.0 * bus.shunt_g * lam[i] + 2.0 * bus.shunt_b * lam[nb_ + i];
    }
    for (std::size_t e = 0; e < net_.num_branches(); ++e) {
      if (!topo_.in_service[e]) continue;
      const auto f = static_cast<Eigen::Index>(net_.from_position(e));
      const auto t = static_cast<Eigen::Index>(net_.to_position(e));
      const auto ends = end_flows(x, e, true);
      add_local(h, ends[0].hess, -lam[f], f, t);
      add_local(h, ends[1].hess, -lam[nb_ + f], f, t);
      add_local(h, ends[2].hess, -lam[t], t, f);
      add_local(h, ends[3].hess, -lam[nb_ + t], t, f);
    }
    // Thermal rows: (P^2 + Q^2) / S^2 - 1 at each end.
    for (std::size_t m = 0; m < thermal_.size(); ++m) {
      const std::size_t e = thermal_[m];
      const auto f = static_cast<Eigen::Index>(net_.from_position(e));
      const auto t = static_cast<Eigen::Index>(net_.to_position(e));
      const double s2 = net_.branches()[e].rate_a * net_.branches()[e].rate_a;
      const auto ends = end_flows(x, e, true);
      for (int side = 0; side < 2; ++side) {
        const double weight = mu[static_cast<Eigen::Index>(2 * m + static_cast<std::size_t>(side))];
        if (weight == 0.0) continue;
        const LocalFlow& p = ends[2 * side];
        const LocalFlow& q = ends[2 * side + 1];
        Eigen::Matrix4d local = p.grad * p.grad.transpose() + p.value * p.hess + q.grad * q.grad.transpose() +
                                q.value * q.hess;
        local *= 2.0 * weight / s2;
        if (side == 0) add_local(h, local, 1.0, f, t);
        else add_local(h, local, 1.0, t, f);
      }
    }
    return h;
  }

  /// Recovered slack totals by family, in elastic mode.
  std::vector<Violation> slack_report(const Eigen::VectorXd& x, double tol) const {
    std::vector<Violation> out;
    auto worst = [&](const char* family, Eigen::Index start, Eigen::Index count) {
      Violation v{family, -1, 0.0};
      for (Eigen::Index k = 0; k < count; ++k) {
        const double mag = std::abs(x[start + k]);
        if (mag > v.magnitude) v = {family, static_cast<int>(k), mag};
      }
      if (v.magnitude > tol) out.push_back(v);
    };
    worst("p_balance", slack_p_, nb_);
    worst("q_balance", slack_p_ + nb_, nb_);
    {
      Violation v{"thermal", -1, 0.0};
      for (std::size_t m = 0; m < thermal_.size(); ++m) {
        const double s = x[slack_thermal_ + static_cast<Eigen::Index>(m)];
        const double rate = net_.branches()[thermal_[m]].rate_a;
        // Slack on the normalized squared limit, expressed as excess apparent power.
        const double excess = rate * (std::sqrt(1.0 + std::max(0.0, s)) - 1.0);
        if (excess > v.magnitude) v = {"thermal", static_cast<int>(thermal_[m]), excess};
      }
      if (v.magnitude > tol) out.push_back(v);
    }
    worst("angle_diff", slack_angle_, static_cast<Eigen::Index>(net_.num_branches()));
    worst("voltage", slack_volt_, nb_);
    return out;
  }

  Eigen::Index core_size() const { return n_core_; }
  Eigen::Index slack_begin() const { return n_core_; }

 private:
  static bool is_fixed(const std::vector<std::pair<Eigen::Index, double>>& list, Eigen::Index g) {
    return std::any_of(list.begin(), list.end(), [g](const auto& item) { return item.first == g; });
  }

  std::array<LocalFlow, 4> end_flows(const Eigen::VectorXd& x, std::size_t e, bool hess) const {
    const auto f = static_cast<Eigen::Index>(net_.from_position(e));
    const auto t = static_cast<Eigen::Index>(net_.to_position(e));
    const auto& k = coeffs_[e];
    const double thf = x[theta(f)], tht = x[theta(t)], vf = x[vm(f)], vt = x[vm(t)];
    return {detail::local_flow(k.p_from, thf, tht, vf, vt, hess), detail::local_flow(k.q_from, thf, tht, vf, vt, hess),
            detail::local_flow(k.p_to, tht, thf, vt, vf, hess), detail::local_flow(k.q_to, tht, thf, vt, vf, hess)};
  }

  std::array<Eigen::Index, 4> local_columns(Eigen::Index i, Eigen::Index j) const {
    return {theta(i), theta(j), vm(i), vm(j)};
  }

  void add_local(Eigen::MatrixXd& h, const Eigen::Matrix4d& local, double weight, Eigen::Index i,
                 Eigen::Index j) const {
    if (weight == 0.0) return;
    const auto cols = local_columns(i, j);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) h(cols[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]) += weight * local(r, c);
  }

  void add_grad_row(Eigen::MatrixXd& jac, Eigen::Index row, const Eigen::Vector4d& grad, double sign, Eigen::Index i,
                    Eigen::Index j) const {
    const auto cols = local_columns(i, j);
    for (int c = 0; c < 4; ++c) jac(row, cols[static_cast<std::size_t>(c)]) += sign * grad[c];
  }

  void balance_rows(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd& dg) const {
    for (Eigen::Index i = 0; i < nb_; ++i) {
      const auto& bus = net_.buses()[static_cast<std::size_t>(i)];
      if (!active_[static_cast<std::size_t>(i)]) {
        // Dead bus outside the slack component: pin its state.
        g[i] = x[theta(i)];
        dg(i, theta(i)) = 1.0;
        g[nb_ + i] = x[vm(i)] - 1.0;
        dg(nb_ + i, vm(i)) = 1.0;
        continue;
      }
      const double v = x[vm(i)];
      g[i] = -bus.p_demand - bus.shunt_g * v * v;
      dg(i, vm(i)) += -2.0 * bus.shunt_g * v;
      g[nb_ + i] = -bus.q_demand + bus.shunt_b * v * v;
      dg(nb_ + i, vm(i)) += 2.0 * bus.shunt_b * v;
      if (elastic_) {
        g[i] += x[slack_p_ + i];
        dg(i, slack_p_ + i) = 1.0;
        g[nb_ + i] += x[slack_p_ + nb_ + i];
        dg(nb_ + i, slack_p_ + nb_ + i) = 1.0;
      }
    }
    for (Eigen::Index gi = 0; gi < ng_; ++gi) {
      const auto b = static_cast<Eigen::Index>(net_.gen_position(static_cast<std::size_t>(gi)));
      if (!active_[static_cast<std::size_t>(b)]) continue;
      g[b] += x[pg(gi)];
      dg(b, pg(gi)) += 1.0;
      g[nb_ + b] += x[qg(gi)];
      dg(nb_ + b, qg(gi)) += 1.0;
    }
    for (std::size_t e = 0; e < net_.num_branches(); ++e) {
      if (!topo_.in_service[e]) continue;
      const auto f = static_cast<Eigen::Index>(net_.from_position(e));
      const auto t = static_cast<Eigen::Index>(net_.to_position(e));
      const auto ends = end_flows(x, e, false);
      g[f] -= ends[0].value;
      g[nb_ + f] -= ends[1].value;
      g[t] -= ends[2].value;
      g[nb_ + t] -= ends[3].value;
      add_grad_row(dg, f, ends[0].grad, -1.0, f, t);
      add_grad_row(dg, nb_ + f, ends[1].grad, -1.0, f, t);
      add_grad_row(dg, t, ends[2].grad, -1.0, t, f);
      add_grad_row(dg, nb_ + t, ends[3].grad, -1.0, t, f);
    }
  }

  void inequality_rows(const Eigen::VectorXd& x, Eigen::VectorXd& h, Eigen::MatrixXd& dh) const {
    Eigen::Index count = 2 * static_cast<Eigen::Index>(thermal_.size()) +
                         static_cast<Eigen::Index>(angle_upper_.size() + angle_lower_.size());
    for (Eigen::Index i = 0; i < nb_; ++i)
      if (active_[static_cast<std::size_t>(i)]) count += 2;
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = net_.generators()[static_cast<std::size_t>(g)];
      if (!is_fixed(p_fixed_, g)) count += 2;
      if (!is_fixed(q_fixed_, g)) {
        if (std::isfinite(gen.q_max)) ++count;
        if (std::isfinite(gen.q_min)) ++count;
      }
    }
    if (elastic_) count += nb_;
    h = Eigen::VectorXd::Zero(count);
    dh = Eigen::MatrixXd::Zero(count, n_);

    Eigen::Index row = 0;
    for (std::size_t m = 0; m < thermal_.size(); ++m) {
      const std::size_t e = thermal_[m];
      const auto f = static_cast<Eigen::Index>(net_.from_position(e));
      const auto t = static_cast<Eigen::Index>(net_.to_position(e));
      const double s2 = net_.branches()[e].rate_a * net_.branches()[e].rate_a;
      const auto ends = end_flows(x, e, false);
      for (int side = 0; side < 2; ++side) {
        const LocalFlow& p = ends[static_cast<std::size_t>(2 * side)];
        const LocalFlow& q = ends[static_cast<std::size_t>(2 * side + 1)];
        h[row] = (p.value * p.value + q.value * q.value) / s2 - 1.0;
        const Eigen::Vector4d grad = 2.0 * (p.value * p.grad + q.value * q.grad) / s2;
        if (side == 0) add_grad_row(dh, row, grad, 1.0, f, t);
        else add_grad_row(dh, row, grad, 1.0, t, f);
        if (elastic_) {
          const Eigen::Index s = slack_thermal_ + static_cast<Eigen::Index>(m);
          h[row] -= x[s];
          dh(row, s) = -1.0;
        }
        ++row;
      }
    }
    auto angle_row = [&](std::size_t e, bool upper) {
      const auto f = static_cast<Eigen::Index>(net_.from_position(e));
      const auto t = static_cast<Eigen::Index>(net_.to_position(e));
      const auto& br = net_.branches()[e];
      const double d = x[theta(f)] - x[theta(t)];
      const double sign = upper ? 1.0 : -1.0;
      h[row] = upper ? d - br.ang_max : br.ang_min - d;
      dh(row, theta(f)) = sign;
      dh(row, theta(t)) = -sign;
      if (elastic_) {
        const Eigen::Index s = slack_angle_ + static_cast<Eigen::Index>(e);
        h[row] -= x[s];
        dh(row, s) = -1.0;
      }
      ++row;
    };
    for (std::size_t e : angle_upper_) angle_row(e, true);
    for (std::size_t e : angle_lower_) angle_row(e, false);
    for (Eigen::Index i = 0; i < nb_; ++i) {
      if (!active_[static_cast<std::size_t>(i)]) continue;
      const auto& bus = net_.buses()[static_cast<std::size_t>(i)];
      h[row] = x[vm(i)] - bus.v_max;
      dh(row, vm(i)) = 1.0;
      if (elastic_) {
        h[row] -= x[slack_volt_ + i];
        dh(row, slack_volt_ + i) = -1.0;
      }
      ++row;
      h[row] = bus.v_min - x[vm(i)];
      dh(row, vm(i)) = -1.0;
      if (elastic_) {
        h[row] -= x[slack_volt_ + i];
        dh(row, slack_volt_ + i) = -1.0;
      }
      ++row;
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = net_.generators()[static_cast<std::size_t>(g)];
      if (!is_fixed(p_fixed_, g)) {
        h[row] = x[pg(g)] - gen.p_max;
        dh(row, pg(g)) = 1.0;
        ++row;
        h[row] = gen.p_min - x[pg(g)];
        dh(row, pg(g)) = -1.0;
        ++row;
      }
      if (!is_fixed(q_fixed_, g)) {
        if (std::isfinite(gen.q_max)) {
          h[row] = x[qg(g)] - gen.q_max;
          dh(row, qg(g)) = 1.0;
          ++row;
        }
        if (std::isfinite(gen.q_min)) {
          h[row] = gen.q_min - x[qg(g)];
          dh(row, qg(g)) = -1.0;
          ++row;
        }
      }
    }
    if (elastic_) {
      for (Eigen::Index i = 0; i < nb_; ++i) {
        h[row] = x[slack_volt_ + i] - kVoltageRelaxCap;
        dh(row, slack_volt_ + i) = 1.0;
        ++row;
      }
    }
  }

  const NetworkCase& net_;
  const Topology& topo_;
  bool elastic_;
  Eigen::Index nb_ = 0, ng_ = 0, n_ = 0, n_core_ = 0;
  Eigen::Index slack_p_ = 0, slack_thermal_ = 0, slack_angle_ = 0, slack_volt_ = 0;
  std::vector<bool> active_;
  std::vector<BranchCoeffs> coeffs_;
  std::vector<std::size_t> thermal_, angle_upper_, angle_lower_;
  std::vector<std::pair<Eigen::Index, double>> p_fixed_, q_fixed_;
};

detail::IpmOptions ipm_options(const AcOpfOptions& o, double cost_mult) {
  detail::IpmOptions ipm;
  ipm.max_iter = o.max_iter;
  ipm.feas_tol = o.feas_tol;
  ipm.grad_tol = o.grad_tol;
  ipm.comp_tol = o.comp_tol;
  ipm.cost_tol = o.cost_tol;
  ipm.step_fraction = o.step_fraction;
  ipm.barrier_reduction = o.barrier_reduction;
  ipm.cost_mult = cost_mult;
  return ipm;
}

AcSolution unpack(const NetworkCase& net, const Topology& topology, const AcOpfNlp& nlp, const Eigen::VectorXd& x) {
  const auto nb = static_cast<Eigen::Index>(net.num_buses());
  const auto ng = static_cast<Eigen::Index>(net.num_generators());
  AcSolution sol;
  sol.theta = x.segment(nlp.theta(0), nb);
  sol.v = x.segment(nlp.vm(0), nb);
  sol.p_gen = x.segment(nlp.pg(0), ng);
  sol.q_gen = x.segment(nlp.qg(0), ng);
  sol.theta[static_cast<Eigen::Index>(net.slack_position())] = 0.0;
  fill_flows(net, topology, sol);
  sol.objective = net.dispatch_cost(sol.p_gen);
  return sol;
}

double kkt_measure(const detail::IpmResult& r) { return std::max({r.feascond, r.gradcond, r.compcond}); }

}  // namespace

AcSolution solve_ac_opf(const NetworkCase& net, const Topology& topology, const AcOpfOptions& options) {
  check_topology_size(net, topology);
  require_no_islanding(net, topology);

  AcOpfNlp nlp(net, topology, false);
  const Eigen::VectorXd x0 = nlp.initial_point();
  auto result = detail::solve_ipm(nlp, x0, ipm_options(options, options.cost_scale));
  int total_iterations = result.iterations;

  if (!result.converged && options.diagnose_infeasibility) {
    AcOpfNlp elastic(net, topology, true);
    Eigen::VectorXd xe = elastic.initial_point();
    auto elastic_options = ipm_options(options, 1.0);
    elastic_options.step_control = true;
    const auto er = detail::solve_ipm(elastic, xe, elastic_options);
    total_iterations += er.iterations;
    const auto report = elastic.slack_report(er.x, 1e-5);
    // A relaxed point that balances only with nonzero slack certifies (locally)
    // that the topology cannot meet every constraint family.
    if ((er.converged || er.max_violation <= 1e-6) && !report.empty()) {
      AcSolution sol = unpack(net, topology, nlp, er.x.head(elastic.core_size()));
      sol.status = AcStatus::infeasible;
      sol.converged = false;
      sol.iterations = total_iterations;
      sol.kkt_residual = kkt_measure(result);
      sol.violations = report;
      return sol;
    }
    if (er.converged) {
      // The relaxation closes with zero slack: restart the true problem from it.
      auto retry_options = ipm_options(options, options.cost_scale);
      retry_options.step_control = true;
      auto retry = detail::solve_ipm(nlp, er.x.head(elastic.core_size()), retry_options);
      total_iterations += retry.iterations;
      if (retry.converged || kkt_measure(retry) < kkt_measure(result)) result = retry;
    }
  }

  AcSolution sol = unpack(net, topology, nlp, result.x);
  sol.iterations = total_iterations;
  sol.kkt_residual = kkt_measure(result);
  sol.converged = result.converged;
  if (result.converged) sol.status = AcStatus::converged;
  else sol.status = result.diverged ? AcStatus::failed : AcStatus::max_iter;
  sol.violations = check_feasibility(net, topology, sol, 1e-6);
  return sol;
}

Eigen::VectorXd apparent_flow_targets(const AcSolution& sol) {
  Eigen::VectorXd out(sol.s_from.size());
  for (Eigen::Index e = 0; e < sol.s_from.size(); ++e) {
    const double mag = std::abs(sol.s_from[e]);
    out[e] = sol.s_from[e].real() < 0.0 ? -mag : mag;
  }
  return out;
}

std::vector<Violation> check_feasibility(const NetworkCase& net, const Topology& topology, const AcSolution& sol,
                                         double tol) {
  check_topology_size(net, topology);
  const auto active = slack_component(net, topology.in_service);
  std::vector<Violation> out;
  auto record = [&](const char* family, int index, double magnitude, Violation& worst) {
    if (magnitude > worst.magnitude) worst = {family, index, magnitude};
  };
  auto flush = [&](Violation& worst) {
    if (worst.magnitude > tol) out.push_back(worst);
  };

  Violation volt{"voltage", -1, 0.0};
  for (std::size_t i = 0; i < net.num_buses(); ++i) {
    if (!active[i]) continue;
    const auto& bus = net.buses()[i];
    const double v = sol.v[static_cast<Eigen::Index>(i)];
    record("voltage", static_cast<int>(i), std::max(v - bus.v_max, bus.v_min - v), volt);
  }
  flush(volt);

  Violation pgv{"p_gen", -1, 0.0}, qgv{"q_gen", -1, 0.0};
  for (std::size_t g = 0; g < net.num_generators(); ++g) {
    const auto& gen = net.generators()[g];
    const double p = sol.p_gen[static_cast<Eigen::Index>(g)];
    const double q = sol.q_gen[static_cast<Eigen::Index>(g)];
    record("p_gen", static_cast<int>(g), std::max(p - gen.p_max, gen.p_min - p), pgv);
    record("q_gen", static_cast<int>(g), std::max(q - gen.q_max, gen.q_min - q), qgv);
  }
  flush(pgv);
  flush(qgv);

  Violation therm{"thermal", -1, 0.0}, ang{"angle_diff", -1, 0.0};
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    if (!topology.in_service[e]) continue;
    const auto& br = net.branches()[e];
    auto [sf, st] = branch_flows(net, e, sol.v, sol.theta);
    if (br.rate_a > 0.0) record("thermal", static_cast<int>(e), std::max(std::abs(sf), std::abs(st)) - br.rate_a, therm);
    const double d = sol.theta[static_cast<Eigen::Index>(net.from_position(e))] -
                     sol.theta[static_cast<Eigen::Index>(net.to_position(e))];
    if (br.ang_max < kAngleLimitInactive) record("angle_diff", static_cast<int>(e), d - br.ang_max, ang);
    if (br.ang_min > -kAngleLimitInactive) record("angle_diff", static_cast<int>(e), br.ang_min - d, ang);
  }
  flush(therm);

  const Eigen::VectorXcd mis = nodal_mismatch(net, topology, sol);
  Violation pb{"p_balance", -1, 0.0}, qb{"q_balance", -1, 0.0};
  for (std::size_t i = 0; i < net.num_buses(); ++i) {
    if (!active[i]) continue;
    record("p_balance", static_cast<int>(i), std::abs(mis[static_cast<Eigen::Index>(i)].real()), pb);
    record("q_balance", static_cast<int>(i), std::abs(mis[static_cast<Eigen::Index>(i)].imag()), qb);
  }
  flush(pb);
  flush(qb);
  flush(ang);

  Violation ref{"ref_angle", static_cast<int>(net.slack_position()),
                std::abs(sol.theta[static_cast<Eigen::Index>(net.slack_position())])};
  flush(ref);
  return out;
}

std::string format_violations(const std::vector<Violation>& violations) {
  if (violations.empty()) return "no violations\n";
  std::string out;
  char line[96];
  std::snprintf(line, sizeof line, "%-12s %8s %14s\n", "family", "index", "magnitude");
  out += line;
  for (const auto& v : violations) {
    std::snprintf(line, sizeof line, "%-12s %8d %14.6e\n", v.family.c_str(), v.index, v.magnitude);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json real_array(const Eigen::VectorXd& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

nlohmann::json complex_array(const Eigen::VectorXcd& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back({v[i].real(), v[i].imag()});
  return arr;
}

Eigen::VectorXd real_vector(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Eigen::VectorXcd complex_vector(const nlohmann::json& j) {
  Eigen::VectorXcd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = {j[i].at(0).get<double>(), j[i].at(1).get<double>()};
  return v;
}

}  // namespace

nlohmann::json to_json(const AcSolution& sol) {
  auto viol = nlohmann::json::array();
  for (const auto& v : sol.violations)
    viol.push_back({{"family", v.family}, {"index", v.index}, {"magnitude", v.magnitude}});
  return {{"status", to_string(sol.status)},
          {"converged", sol.converged},
          {"objective", sol.objective},
          {"iterations", sol.iterations},
          {"kkt_residual", sol.kkt_residual},
          {"v", real_array(sol.v)},
          {"theta", real_array(sol.theta)},
          {"p_gen", real_array(sol.p_gen)},
          {"q_gen", real_array(sol.q_gen)},
          {"s_from", complex_array(sol.s_from)},
          {"s_to", complex_array(sol.s_to)},
          {"violations", viol}};
}

AcSolution ac_solution_from_json(const nlohmann::json& doc) {
  AcSolution sol;
  sol.v = real_vector(doc.at("v"));
  sol.theta = real_vector(doc.at("theta"));
  sol.p_gen = real_vector(doc.at("p_gen"));
  sol.q_gen = real_vector(doc.at("q_gen"));
  sol.s_from = complex_vector(doc.at("s_from"));
  sol.s_to = complex_vector(doc.at("s_to"));
  sol.objective = doc.at("objective").get<double>();
  sol.converged = doc.at("converged").get<bool>();
  sol.iterations = doc.value("iterations", 0);
  sol.kkt_residual = doc.value("kkt_residual", 0.0);
  const auto status = doc.value("status", std::string(sol.converged ? "converged" : "failed"));
  if (status == "converged") sol.status = AcStatus::converged;
  else if (status == "infeasible") sol.status = AcStatus::infeasible;
  else if (status == "max_iter") sol.status = AcStatus::max_iter;
  else sol.status = AcStatus::failed;
  if (doc.contains("violations"))
    for (const auto& v : doc.at("violations"))
      sol.violations.push_back({v.at("family").get<std::string>(), v.at("index").get<int>(), v.at("magnitude").get<double>()});
  return sol;
}

}  // namespace dcots
