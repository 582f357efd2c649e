// SPDX-License-Identifier: BSD-2-Clause
#include "dcots/dc_ots.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "dcots/ac_solver.hpp"

namespace dcots {

namespace {

constexpr double kAngleLimitInactive = 2.0 * std::numbers::pi - 1e-9;
constexpr double kIntegralTol = 1e-6;
constexpr double kFixedGenTol = 1e-12;

enum class LineState : signed char { free = -1, off = 0, on = 1 };

bool angle_limit_active(double limit) { return std::abs(limit) < kAngleLimitInactive; }

/// The relaxation at one node. Variables: [pg; theta; p_flow; u of free lines].
struct NodeModel {
  QpProblem qp;
  std::vector<int> free_lines;
  double constant = 0.0;
  Eigen::Index ng = 0, nb = 0, ne = 0;

  Eigen::Index pf(Eigen::Index e) const { return ng + nb + e; }
  Eigen::Index uv(Eigen::Index k) const { return ng + nb + ne + k; }
};

NodeModel build_node(const NetworkCase& net, const DcParameters& params, const OtsConfig& cfg, const BigM& big_m,
                     const std::vector<LineState>& state) {
  NodeModel m;
  m.ng = static_cast<Eigen::Index>(net.num_generators());
  m.nb = static_cast<Eigen::Index>(net.num_buses());
  m.ne = static_cast<Eigen::Index>(net.num_branches());
  for (Eigen::Index e = 0; e < m.ne; ++e)
    if (state[static_cast<std::size_t>(e)] == LineState::free) m.free_lines.push_back(static_cast<int>(e));
  const auto nf = static_cast<Eigen::Index>(m.free_lines.size());
  const Eigen::Index n = m.ng + m.nb + m.ne + nf;
  auto th = [&m](Eigen::Index i) { return m.ng + i; };
  std::vector<Eigen::Index> free_pos(static_cast<std::size_t>(m.ne), -1);
  for (Eigen::Index k = 0; k < nf; ++k) free_pos[static_cast<std::size_t>(m.free_lines[static_cast<std::size_t>(k)])] = k;

  QpProblem& qp = m.qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.c = Eigen::VectorXd::Zero(n);
  for (Eigen::Index g = 0; g < m.ng; ++g) {
    const auto& gen = net.generators()[static_cast<std::size_t>(g)];
    qp.H(g, g) = 2.0 * gen.c2;
    qp.c[g] = gen.c1;
    m.constant += gen.c0;
  }
  long n_on = 0, n_off = 0;
  for (auto s : state) {
    if (s == LineState::on) ++n_on;
    if (s == LineState::off) ++n_off;
  }
  if (cfg.penalty == PenaltySense::per_opened_line) {
    m.constant += cfg.c_prof * static_cast<double>(n_off + nf);
    for (Eigen::Index k = 0; k < nf; ++k) qp.c[m.uv(k)] = -cfg.c_prof;
  } else {
    m.constant += cfg.c_prof * static_cast<double>(n_on);
    for (Eigen::Index k = 0; k < nf; ++k) qp.c[m.uv(k)] = cfg.c_prof;
  }

  std::vector<Eigen::Triplet<double>> eq, in;
  std::vector<double> e_rhs, h_rhs;
  auto eq_row = [&](std::initializer_list<std::pair<Eigen::Index, double>> coeffs, double rhs) {
    const auto row = static_cast<Eigen::Index>(e_rhs.size());
    for (const auto& [col, v] : coeffs) eq.emplace_back(row, col, v);
    e_rhs.push_back(rhs);
  };
  auto in_row = [&](std::initializer_list<std::pair<Eigen::Index, double>> coeffs, double rhs) {
    const auto row = static_cast<Eigen::Index>(h_rhs.size());
    for (const auto& [col, v] : coeffs) in.emplace_back(row, col, v);
    h_rhs.push_back(rhs);
  };

  // Balance: C pg - A' p_flow = pd + gamma.
  for (Eigen::Index i = 0; i < m.nb; ++i)
    e_rhs.push_back(net.buses()[static_cast<std::size_t>(i)].p_demand + params.gamma[i]);
  for (Eigen::Index g = 0; g < m.ng; ++g)
    eq.emplace_back(static_cast<Eigen::Index>(net.gen_position(static_cast<std::size_t>(g))), g, 1.0);
  for (Eigen::Index e = 0; e < m.ne; ++e) {
    eq.emplace_back(static_cast<Eigen::Index>(net.from_position(static_cast<std::size_t>(e))), m.pf(e), -1.0);
    eq.emplace_back(static_cast<Eigen::Index>(net.to_position(static_cast<std::size_t>(e))), m.pf(e), 1.0);
  }
  eq_row({{th(static_cast<Eigen::Index>(net.slack_position())), 1.0}}, 0.0);
  for (Eigen::Index g = 0; g < m.ng; ++g) {
    const auto& gen = net.generators()[static_cast<std::size_t>(g)];
    if (std::abs(gen.p_max - gen.p_min) <= kFixedGenTol) eq_row({{g, 1.0}}, gen.p_min);
  }

  const double tm = big_m.theta;
  for (Eigen::Index e = 0; e < m.ne; ++e) {
    const auto& br = net.branches()[static_cast<std::size_t>(e)];
    const Eigen::Index f = th(static_cast<Eigen::Index>(net.from_position(static_cast<std::size_t>(e))));
    const Eigen::Index t = th(static_cast<Eigen::Index>(net.to_position(static_cast<std::size_t>(e))));
    const double b = params.b[e], rho = params.rho[e], psi = params.psi[e], s = br.rate_a, mf = big_m.flow[e];
    const bool up = angle_limit_active(br.ang_max), lo = angle_limit_active(br.ang_min);
    switch (state[static_cast<std::size_t>(e)]) {
      case LineState::on:
        eq_row({{m.pf(e), 1.0}, {f, -b}, {t, b}}, rho);
        in_row({{m.pf(e), 1.0}}, s - psi);
        in_row({{m.pf(e), -1.0}}, s + psi);
        if (up) in_row({{f, 1.0}, {t, -1.0}}, br.ang_max);
        if (lo) in_row({{f, -1.0}, {t, 1.0}}, -br.ang_min);
        break;
      case LineState::off:
        eq_row({{m.pf(e), 1.0}}, -psi);
        in_row({{m.pf(e), 1.0}, {f, -b}, {t, b}}, rho + mf);
        in_row({{m.pf(e), -1.0}, {f, b}, {t, -b}}, -rho + mf);
        if (up) in_row({{f, 1.0}, {t, -1.0}}, tm);
        if (lo) in_row({{f, -1.0}, {t, 1.0}}, tm);
        break;
      case LineState::free: {
        const Eigen::Index u = m.uv(free_pos[static_cast<std::size_t>(e)]);
        in_row({{m.pf(e), 1.0}, {f, -b}, {t, b}, {u, mf}}, rho + mf);
        in_row({{m.pf(e), -1.0}, {f, b}, {t, -b}, {u, mf}}, -rho + mf);
        in_row({{m.pf(e), 1.0}, {u, -s}}, -psi);
        in_row({{m.pf(e), -1.0}, {u, -s}}, psi);
        if (up) in_row({{f, 1.0}, {t, -1.0}, {u, tm - br.ang_max}}, tm);
        if (lo) in_row({{f, -1.0}, {t, 1.0}, {u, tm + br.ang_min}}, tm);
        in_row({{u, 1.0}}, 1.0);
        in_row({{u, -1.0}}, 0.0);
        break;
      }
    }
  }
  for (Eigen::Index i = 0; i < m.nb; ++i) {
    if (i == static_cast<Eigen::Index>(net.slack_position())) continue;
    in_row({{th(i), 1.0}}, cfg.theta_box);
    in_row({{th(i), -1.0}}, cfg.theta_box);
  }
  for (Eigen::Index g = 0; g < m.ng; ++g) {
    const auto& gen = net.generators()[static_cast<std::size_t>(g)];
    if (std::abs(gen.p_max - gen.p_min) <= kFixedGenTol) continue;
    in_row({{g, 1.0}}, gen.p_max);
    in_row({{g, -1.0}}, -gen.p_min);
  }

  qp.E.resize(static_cast<Eigen::Index>(e_rhs.size()), n);
  qp.E.setFromTriplets(eq.begin(), eq.end());
  qp.e = Eigen::Map<const Eigen::VectorXd>(e_rhs.data(), static_cast<Eigen::Index>(e_rhs.size()));
  qp.G.resize(static_cast<Eigen::Index>(h_rhs.size()), n);
  qp.G.setFromTriplets(in.begin(), in.end());
  qp.h = Eigen::Map<const Eigen::VectorXd>(h_rhs.data(), static_cast<Eigen::Index>(h_rhs.size()));
  return m;
}

/// Solution of one node in the full layout [pg; theta; p_flow; u (all lines)].
struct NodeResult {
  bool feasible = false;
  double objective = 0.0;
  Eigen::VectorXd full;
};

NodeResult solve_node(const NetworkCase& net, const DcParameters& params, const OtsConfig& cfg, const BigM& big_m,
                      const std::vector<LineState>& state, const Eigen::VectorXd* warm) {
  const NodeModel m = build_node(net, params, cfg, big_m, state);
  const Eigen::Index base = m.ng + m.nb + m.ne;
  std::optional<Eigen::VectorXd> start;
  if (warm) {
    Eigen::VectorXd x(m.qp.num_vars());
    x.head(base) = warm->head(base);
    for (std::size_t k = 0; k < m.free_lines.size(); ++k)
      x[base + static_cast<Eigen::Index>(k)] = (*warm)[base + m.free_lines[k]];
    start = std::move(x);
  }
  const QpSolution sol = solve_qp(m.qp, cfg.qp, start);
  NodeResult out;
  if (sol.status != QpStatus::optimal) return out;
  out.feasible = true;
  out.objective = sol.objective + m.constant;
  out.full.resize(base + m.ne);
  out.full.head(base) = sol.x.head(base);
  for (Eigen::Index e = 0; e < m.ne; ++e) {
    const auto s = state[static_cast<std::size_t>(e)];
    out.full[base + e] = s == LineState::on ? 1.0 : 0.0;
  }
  for (std::size_t k = 0; k < m.free_lines.size(); ++k)
    out.full[base + m.free_lines[k]] = sol.x[base + static_cast<Eigen::Index>(k)];
  return out;
}

BigM resolve_big_m(const NetworkCase& net, const DcParameters& params, const OtsConfig& cfg) {
  BigM m = default_big_m(net, params, cfg.theta_box);
  if (cfg.flow_big_m) m.flow = *cfg.flow_big_m;
  if (cfg.theta_big_m) m.theta = *cfg.theta_big_m;
  return m;
}

void fill_solution(const NetworkCase& net, const NodeResult& node, OtsSolution& out) {
  const auto ng = static_cast<Eigen::Index>(net.num_generators());
  const auto nb = static_cast<Eigen::Index>(net.num_buses());
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  out.p_gen = node.full.head(ng);
  out.theta = node.full.segment(ng, nb);
  out.p_flow = node.full.segment(ng + nb, ne);
  out.u.assign(static_cast<std::size_t>(ne), 1);
  out.opened_lines.clear();
  for (Eigen::Index e = 0; e < ne; ++e) {
    out.u[static_cast<std::size_t>(e)] = node.full[ng + nb + ne + e] > 0.5 ? 1 : 0;
    if (!out.u[static_cast<std::size_t>(e)]) out.opened_lines.push_back(static_cast<int>(e) + 1);
  }
  out.dispatch_cost = net.dispatch_cost(out.p_gen);
  out.objective = node.objective;
}

std::vector<LineState> fixed_state(const std::vector<int>& u) {
  std::vector<LineState> s(u.size());
  for (std::size_t e = 0; e < u.size(); ++e) s[e] = u[e] ? LineState::on : LineState::off;
  return s;
}

}  // namespace

void OtsConfig::validate(const NetworkCase& net, const DcParameters& params) const {
  params.validate(net);
  if (!(c_prof >= 0.0)) throw std::invalid_argument("ots: c_prof must be >= 0");
  if (!(mip_gap > 0.0)) throw std::invalid_argument("ots: mip_gap must be > 0");
  if (!(theta_box > 0.0)) throw std::invalid_argument("ots: theta_box must be > 0");
  if (node_cap < 1) throw std::invalid_argument("ots: node_cap must be >= 1");
  for (int line : candidate_lines)
    if (line < 1 || static_cast<std::size_t>(line) > net.num_branches())
      throw std::invalid_argument("ots: candidate line " + std::to_string(line) + " out of range");
  if (flow_big_m) {
    if (flow_big_m->size() != static_cast<Eigen::Index>(net.num_branches()))
      throw std::invalid_argument("ots: flow big-M length differs from branch count");
    for (Eigen::Index e = 0; e < flow_big_m->size(); ++e)
      if ((*flow_big_m)[e] < std::abs(params.b[e]) * 2.0 * theta_box + std::abs(params.rho[e]))
        throw std::invalid_argument("ots: flow big-M too small for branch " + std::to_string(e + 1));
  }
  if (theta_big_m && *theta_big_m < 2.0 * theta_box)
    throw std::invalid_argument("ots: angle big-M too small for the angle box");
}

BigM default_big_m(const NetworkCase& net, const DcParameters& params, double theta_box) {
  params.validate(net);
  BigM m;
  m.flow = params.b.cwiseAbs() * (2.0 * theta_box) + params.rho.cwiseAbs() + params.psi.cwiseAbs();
  m.flow.array() += 1e-6;
  m.theta = 2.0 * theta_box + 1e-6;
  return m;
}

const char* to_string(OtsStatus status) {
  switch (status) {
    case OtsStatus::optimal: return "optimal";
    case OtsStatus::node_cap: return "node_cap";
    case OtsStatus::infeasible: return "infeasible";
  }
  return "infeasible";
}

bool statuses_connected(const NetworkCase& net, const std::vector<int>& u) {
  Topology t = Topology::all_in(net);
  for (std::size_t e = 0; e < u.size(); ++e) t.in_service[e] = u[e] != 0;
  return !islands_load_or_generation(net, t);
}

OtsSolution solve_fixed_statuses(const NetworkCase& net, const DcParameters& params, const OtsConfig& config,
                                 const std::vector<int>& u) {
  config.validate(net, params);
  if (u.size() != net.num_branches()) throw std::invalid_argument("ots: status vector length differs from branch count");
  OtsSolution out;
  out.nodes = 1;
  if (!statuses_connected(net, u)) return out;
  const BigM big_m = resolve_big_m(net, params, config);
  const NodeResult node = solve_node(net, params, config, big_m, fixed_state(u), nullptr);
  if (!node.feasible) return out;
  fill_solution(net, node, out);
  out.status = OtsStatus::optimal;
  out.bound = out.objective;
  return out;
}

OtsSolution solve_c_dc_ots(const NetworkCase& net, const DcParameters& params, const OtsConfig& config) {
  config.validate(net, params);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  const Eigen::Index u_base = static_cast<Eigen::Index>(net.num_generators() + net.num_buses()) + ne;
  const BigM big_m = resolve_big_m(net, params, config);

  std::vector<LineState> root(static_cast<std::size_t>(ne), LineState::on);
  if (config.candidate_lines.empty()) {
    std::fill(root.begin(), root.end(), LineState::free);
  } else {
    for (int line : config.candidate_lines) root[static_cast<std::size_t>(line - 1)] = LineState::free;
  }

  OtsSolution best;
  double incumbent = std::numeric_limits<double>::infinity();
  auto offer = [&](const std::vector<int>& u, const Eigen::VectorXd* warm) {
    if (!statuses_connected(net, u)) return;
    const NodeResult node = solve_node(net, params, config, big_m, fixed_state(u), warm);
    if (!node.feasible || node.objective >= incumbent) return;
    incumbent = node.objective;
    fill_solution(net, node, best);
  };
  // All lines in service is always a candidate incumbent.
  offer(std::vector<int>(static_cast<std::size_t>(ne), 1), nullptr);

  struct Node {
    double bound;
    long id;
    std::vector<LineState> state;
    Eigen::VectorXd warm;
  };
  auto worse = [](const Node& a, const Node& b) { return a.bound > b.bound || (a.bound == b.bound && a.id > b.id); };
  std::priority_queue<Node, std::vector<Node>, decltype(worse)> open(worse);
  long next_id = 0;
  open.push({-std::numeric_limits<double>::infinity(), next_id++, root, {}});

  auto cutoff = [&]() { return incumbent - config.mip_gap * std::max(std::abs(incumbent), 1.0); };
  long nodes = 0;
  double proven = std::numeric_limits<double>::infinity();
  bool capped = false;
  while (!open.empty()) {
    if (open.top().bound >= cutoff()) break;
    if (nodes >= config.node_cap) {
      capped = true;
      break;
    }
    Node node = open.top();
    open.pop();
    ++nodes;
    const NodeResult res =
        solve_node(net, params, config, big_m, node.state, node.warm.size() ? &node.warm : nullptr);
    if (!res.feasible || res.objective >= cutoff()) continue;

    // Most fractional free status, ties by lowest branch index.
    Eigen::Index pick = -1;
    double best_dist = 0.5 - kIntegralTol;
    for (Eigen::Index e = 0; e < ne; ++e) {
      if (node.state[static_cast<std::size_t>(e)] != LineState::free) continue;
      const double v = res.full[u_base + e];
      const double dist = std::abs(v - std::round(v));
      if (dist > kIntegralTol && 0.5 - dist < best_dist) {
        best_dist = 0.5 - dist;
        pick = e;
      }
    }
    if (pick < 0) {
      std::vector<int> u(static_cast<std::size_t>(ne));
      for (Eigen::Index e = 0; e < ne; ++e) u[static_cast<std::size_t>(e)] = res.full[u_base + e] > 0.5 ? 1 : 0;
      if (statuses_connected(net, u)) {
        offer(u, &res.full);
        continue;
      }
      // Integral but islanding: split on the first free line that is open.
      for (Eigen::Index e = 0; e < ne && pick < 0; ++e)
        if (node.state[static_cast<std::size_t>(e)] == LineState::free && u[static_cast<std::size_t>(e)] == 0) pick = e;
      if (pick < 0) continue;
    }
    for (LineState s : {LineState::off, LineState::on}) {
      Node child{res.objective, next_id++, node.state, res.full};
      child.state[static_cast<std::size_t>(pick)] = s;
      open.push(std::move(child));
    }
  }
  if (!open.empty()) proven = open.top().bound;

  best.nodes = nodes;
  best.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!std::isfinite(incumbent)) {
    best.status = OtsStatus::infeasible;
    return best;
  }
  best.bound = std::min(proven, incumbent);
  best.gap = (incumbent - best.bound) / std::max(std::abs(incumbent), 1.0);
  best.status = capped ? OtsStatus::node_cap : OtsStatus::optimal;
  return best;
}

OtsSolution solve_traditional_dc_ots(const NetworkCase& net, const OtsConfig& config) {
  OtsConfig cfg = config;
  cfg.c_prof = 0.0;
  return solve_c_dc_ots(net, cold_start(net), cfg);
}

nlohmann::json to_json(const OtsSolution& sol) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"status", to_string(sol.status)},
          {"opened_lines", sol.opened_lines},
          {"objective", sol.objective},
          {"dispatch_cost", sol.dispatch_cost},
          {"bound", sol.bound},
          {"gap", sol.gap},
          {"nodes", sol.nodes},
          {"seconds", sol.seconds},
          {"u", sol.u},
          {"p_gen", vec(sol.p_gen)},
          {"theta", vec(sol.theta)},
          {"p_flow", vec(sol.p_flow)}};
}

std::string format_opened_lines(const std::vector<int>& opened) {
  if (opened.empty()) return "--";
  std::ostringstream out;
  for (std::size_t i = 0; i < opened.size(); ++i) out << (i ? ", " : "") << opened[i];
  return out.str();
}

}  // namespace dcots
