// Shared fixtures and independent reference solvers for the test suites.
//
// The reference solvers here deliberately avoid the library's QP machinery:
// they assemble dense matrices straight from the case data and solve them with
// a dense interior-point method, or by enumerating active sets.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcots/ac_solver.hpp"
#include "dcots/dc_opf.hpp"
#include "dcots/dc_ots.hpp"
#include "dcots/dc_params.hpp"
#include "dcots/network.hpp"
#include "dcots/tuner.hpp"

namespace testing {

inline std::string case_path(const std::string& stem) {
  return std::string(DCOTS_CASE_DIR) + "/pglib_opf_" + stem + "__api.m";
}
inline std::string fixture_path(const std::string& file) { return std::string(DCOTS_TEST_DATA) + "/" + file; }

inline const std::vector<std::string>& small_cases() {
  static const std::vector<std::string> names = {"case3_lmbd", "case5_pjm",  "case14_ieee",
                                                 "case24_ieee_rts", "case30_as", "case30_ieee"};
  return names;
}

/// Two buses, one lossless line with b = 10, 1.0 p.u. load, c1 = 10 $/p.u.
inline dcots::NetworkCase two_bus() { return dcots::load_case(fixture_path("case2.m")); }

/// Builds a MATPOWER text case from rows given in source units.
inline std::string matpower_text(const std::vector<std::string>& bus, const std::vector<std::string>& gen,
                                 const std::vector<std::string>& branch, const std::vector<std::string>& gencost,
                                 double base = 100.0) {
  std::string out = "function mpc = fixture\nmpc.version = '2';\nmpc.baseMVA = " + std::to_string(base) + ";\n";
  auto table = [&out](const char* name, const std::vector<std::string>& rows) {
    out += std::string("mpc.") + name + " = [\n";
    for (const auto& r : rows) out += "\t" + r + ";\n";
    out += "];\n";
  };
  table("bus", bus);
  table("gen", gen);
  table("branch", branch);
  table("gencost", gencost);
  return out;
}

// ---------------------------------------------------------------------------
// Dense primal-dual interior point for  min 1/2 x'Hx + c'x  s.t.  Ax = b, Gx <= h.

struct DenseQp {
  Eigen::MatrixXd H;
  Eigen::VectorXd c;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  double constant = 0.0;
};

struct DenseQpResult {
  bool converged = false;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

inline DenseQpResult dense_ipm(const DenseQp& p, int max_iter = 200) {
  const Eigen::Index n = p.H.rows(), me = p.A.rows(), mi = p.G.rows();
  const double scale = std::max({1.0, p.H.cwiseAbs().maxCoeff(), p.c.cwiseAbs().maxCoeff()});
  const Eigen::MatrixXd H = p.H / scale;
  const Eigen::VectorXd c = p.c / scale;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), y = Eigen::VectorXd::Zero(me);
  Eigen::VectorXd s = (p.h - p.G * x).cwiseMax(1.0), z = Eigen::VectorXd::Ones(mi);
  const double scale_b = 1.0 + std::max(p.b.size() ? p.b.lpNorm<Eigen::Infinity>() : 0.0,
                                        p.h.size() ? p.h.lpNorm<Eigen::Infinity>() : 0.0);
  DenseQpResult out;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd rd = H * x + c + p.A.transpose() * y + p.G.transpose() * z;
    const Eigen::VectorXd rp = p.A * x - p.b;
    const Eigen::VectorXd rs = p.G * x + s - p.h;
    const double mu = mi > 0 ? s.dot(z) / static_cast<double>(mi) : 0.0;
    const double rp_norm = std::max(rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0,
                                    rs.size() ? rs.lpNorm<Eigen::Infinity>() : 0.0);
    out.iterations = it;
    if (rd.lpNorm<Eigen::Infinity>() < 1e-8 && rp_norm < 1e-9 * scale_b && mu < 1e-9) {
      out.converged = true;
      break;
    }

    const Eigen::VectorXd d = z.cwiseQuotient(s);
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me, n + me);
    kkt.topLeftCorner(n, n) = H + p.G.transpose() * d.asDiagonal() * p.G;
    kkt.topRightCorner(n, me) = p.A.transpose();
    kkt.bottomLeftCorner(me, n) = p.A;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);

    // Z ds + S dz = rc
    auto direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& ds,
                         Eigen::VectorXd& dz) {
      Eigen::VectorXd rhs(n + me);
      rhs.head(n) = -rd - p.G.transpose() * (rc + z.cwiseProduct(rs)).cwiseQuotient(s);
      rhs.tail(me) = -rp;
      const Eigen::VectorXd sol = lu.solve(rhs);
      dx = sol.head(n);
      dy = sol.tail(me);
      ds = -rs - p.G * dx;
      dz = (rc - z.cwiseProduct(ds)).cwiseQuotient(s);
    };

    Eigen::VectorXd dx, dy, ds, dz;
    direction(-s.cwiseProduct(z), dx, dy, ds, dz);
    const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    const double mu_aff = mi > 0 ? (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(mi) : 0.0;
    const double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3) : 0.0;
    direction(Eigen::VectorXd::Constant(mi, sigma * mu) - s.cwiseProduct(z) - ds.cwiseProduct(dz), dx, dy, ds, dz);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
    x += a * dx;
    y += a * dy;
    s += a * ds;
    z += a * dz;
  }
  out.x = x;
  out.objective = 0.5 * x.dot(p.H * x) + p.c.dot(x) + p.constant;
  return out;
}

// ---------------------------------------------------------------------------
// Active-set enumeration for tiny strictly convex QPs.

inline DenseQpResult enumerate_active_sets(const DenseQp& p) {
  const Eigen::Index n = p.H.rows(), me = p.A.rows(), mi = p.G.rows();
  DenseQpResult out;
  for (long mask = 0; mask < (1L << mi); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < mi; ++i)
      if (mask & (1L << i)) act.push_back(i);
    const auto k = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me + k, n + me + k);
    Eigen::VectorXd rhs(n + me + k);
    kkt.topLeftCorner(n, n) = p.H;
    kkt.block(0, n, n, me) = p.A.transpose();
    kkt.block(n, 0, me, n) = p.A;
    rhs.head(n) = -p.c;
    rhs.segment(n, me) = p.b;
    for (Eigen::Index j = 0; j < k; ++j) {
      kkt.block(0, n + me + j, n, 1) = p.G.row(act[j]).transpose();
      kkt.block(n + me + j, 0, 1, n) = p.G.row(act[j]);
      rhs[n + me + j] = p.h[act[j]];
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    if (k > 0 && sol.tail(k).minCoeff() < -1e-10) continue;
    if (mi > 0 && (p.G * x - p.h).maxCoeff() > 1e-10) continue;
    out.converged = true;
    out.x = x;
    out.objective = 0.5 * x.dot(p.H * x) + p.c.dot(x) + p.constant;
    return out;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Textbook B-theta DC-OPF assembled densely from the case tables.

inline DenseQp dense_dc_opf_problem(const dcots::NetworkCase& net, const dcots::DcParameters& prm,
                                    dcots::DcOpfMode mode, double theta_box = 0.6) {
  const bool inner = mode == dcots::DcOpfMode::model6_inner;
  const auto& buses = net.buses();
  const auto& lines = net.branches();
  const auto& gens = net.generators();
  const auto nb = static_cast<Eigen::Index>(buses.size());
  const auto ng = static_cast<Eigen::Index>(gens.size());
  const auto ne = static_cast<Eigen::Index>(lines.size());
  const Eigen::Index n = ng + nb;

  auto pos = [&](int id) {
    for (Eigen::Index i = 0; i < nb; ++i)
      if (buses[static_cast<std::size_t>(i)].id == id) return i;
    return Eigen::Index{-1};
  };
  Eigen::Index slack = 0;
  for (Eigen::Index i = 0; i < nb; ++i)
    if (buses[static_cast<std::size_t>(i)].kind == dcots::BusKind::slack) slack = i;

  DenseQp p;
  p.H = Eigen::MatrixXd::Zero(n, n);
  p.c = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> fixed;
  for (Eigen::Index g = 0; g < ng; ++g) {
    const auto& gen = gens[static_cast<std::size_t>(g)];
    p.H(g, g) = 2.0 * gen.c2;
    p.c[g] = gen.c1;
    p.constant += gen.c0;
    if (gen.p_max - gen.p_min <= 1e-12) fixed.push_back(g);
  }

  // Bus susceptance matrix with weights b: flows = diag(b) A theta.
  Eigen::MatrixXd inc = Eigen::MatrixXd::Zero(ne, nb);
  for (Eigen::Index e = 0; e < ne; ++e) {
    inc(e, pos(lines[static_cast<std::size_t>(e)].from_bus)) = 1.0;
    inc(e, pos(lines[static_cast<std::size_t>(e)].to_bus)) = -1.0;
  }
  const Eigen::MatrixXd bbus = inc.transpose() * prm.b.asDiagonal() * inc;

  const Eigen::Index me = nb + 1 + static_cast<Eigen::Index>(fixed.size());
  p.A = Eigen::MatrixXd::Zero(me, n);
  p.b = Eigen::VectorXd::Zero(me);
  for (Eigen::Index g = 0; g < ng; ++g) p.A(pos(gens[static_cast<std::size_t>(g)].bus), g) += 1.0;
  p.A.block(0, ng, nb, nb) = -bbus;
  for (Eigen::Index i = 0; i < nb; ++i) p.b[i] = buses[static_cast<std::size_t>(i)].p_demand;
  if (!inner) p.b.head(nb) += prm.gamma + inc.transpose() * prm.rho;
  p.A(nb, ng + slack) = 1.0;
  for (std::size_t k = 0; k < fixed.size(); ++k) {
    p.A(nb + 1 + static_cast<Eigen::Index>(k), fixed[k]) = 1.0;
    p.b[nb + 1 + static_cast<Eigen::Index>(k)] = gens[static_cast<std::size_t>(fixed[k])].p_min;
  }

  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  auto ineq = [&](Eigen::VectorXd row, double bound) {
    rows.push_back(std::move(row));
    rhs.push_back(bound);
  };
  const double inactive = 2.0 * std::numbers::pi - 1e-9;
  for (Eigen::Index e = 0; e < ne; ++e) {
    const auto& br = lines[static_cast<std::size_t>(e)];
    Eigen::VectorXd angle = Eigen::VectorXd::Zero(n);
    angle.tail(nb) = inc.row(e).transpose();
    const double offset = inner ? prm.psi[e] : prm.rho[e];
    ineq(prm.b[e] * angle, br.rate_a - offset);
    ineq(-prm.b[e] * angle, br.rate_a + offset);
    if (std::abs(br.ang_max) < inactive) ineq(angle, br.ang_max);
    if (std::abs(br.ang_min) < inactive) ineq(-angle, -br.ang_min);
  }
  if (inner) {
    for (Eigen::Index i = 0; i < nb; ++i) {
      if (i == slack) continue;
      Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
      row[ng + i] = 1.0;
      ineq(row, theta_box);
      ineq(-row, theta_box);
    }
  }
  for (Eigen::Index g = 0; g < ng; ++g) {
    if (std::find(fixed.begin(), fixed.end(), g) != fixed.end()) continue;
    Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
    row[g] = 1.0;
    ineq(row, gens[static_cast<std::size_t>(g)].p_max);
    ineq(-row, -gens[static_cast<std::size_t>(g)].p_min);
  }
  p.G.resize(static_cast<Eigen::Index>(rows.size()), n);
  p.h.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    p.G.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    p.h[static_cast<Eigen::Index>(r)] = rhs[r];
  }
  return p;
}

/// Objective in $/h, or NaN when the dense method does not converge.
inline double dense_dc_opf(const dcots::NetworkCase& net, const dcots::DcParameters& prm, dcots::DcOpfMode mode,
                           double theta_box = 0.6) {
  const DenseQpResult r = dense_ipm(dense_dc_opf_problem(net, prm, mode, theta_box));
  return r.converged ? r.objective : std::numeric_limits<double>::quiet_NaN();
}

/// Buses reachable from the slack once the given 1-based branches are opened.
inline std::vector<bool> reached_from_slack(const dcots::NetworkCase& net, const std::vector<int>& opened) {
  const auto nb = net.num_buses();
  std::vector<std::vector<std::size_t>> adj(nb);
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    if (std::find(opened.begin(), opened.end(), static_cast<int>(e + 1)) != opened.end()) continue;
    const auto f = net.bus_position(net.branches()[e].from_bus), t = net.bus_position(net.branches()[e].to_bus);
    adj[f].push_back(t);
    adj[t].push_back(f);
  }
  std::vector<bool> seen(nb, false);
  std::queue<std::size_t> q;
  q.push(net.slack_position());
  seen[net.slack_position()] = true;
  while (!q.empty()) {
    const auto i = q.front();
    q.pop();
    for (auto j : adj[i])
      if (!seen[j]) {
        seen[j] = true;
        q.push(j);
      }
  }
  return seen;
}

/// Same case with the given 1-based branches deleted, along with any buses and generators they strand.
inline dcots::NetworkCase without_lines(const dcots::NetworkCase& net, const std::vector<int>& opened) {
  const std::vector<bool> seen = reached_from_slack(net, opened);
  std::vector<dcots::Bus> buses;
  for (std::size_t i = 0; i < net.num_buses(); ++i)
    if (seen[i]) buses.push_back(net.buses()[i]);
  std::vector<dcots::Branch> kept;
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    const auto& br = net.branches()[e];
    if (std::find(opened.begin(), opened.end(), static_cast<int>(e + 1)) == opened.end() &&
        seen[net.bus_position(br.from_bus)])
      kept.push_back(br);
  }
  std::vector<dcots::Generator> gens;
  for (const auto& g : net.generators())
    if (seen[net.bus_position(g.bus)]) gens.push_back(g);
  return dcots::NetworkCase(net.name(), net.base_mva(), buses, kept, gens);
}

/// Every bus with load or generation capacity still reaches the slack bus.
inline bool serves_all_load(const dcots::NetworkCase& net, const std::vector<int>& opened) {
  const std::vector<bool> seen = reached_from_slack(net, opened);
  for (std::size_t i = 0; i < net.num_buses(); ++i)
    if (!seen[i] && net.buses()[i].p_demand != 0.0) return false;
  for (const auto& g : net.generators())
    if (!seen[net.bus_position(g.bus)] && g.p_max > 0.0) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Central-difference check of the tuner gradient along random directions.

struct GradientCheck {
  int accepted = 0;
  int redrawn = 0;
  double worst_relative_error = 0.0;
};

inline GradientCheck check_gradient(const dcots::NetworkCase& net, const dcots::DcParameters& base,
                                    const Eigen::VectorXd& targets, int directions, unsigned seed) {
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  const dcots::Objective fn = dcots::flow_mismatch_objective(net, base, targets);
  Eigen::VectorXd x0(2 * ne);
  x0 << base.b, base.psi;
  const auto at = fn(x0);
  GradientCheck out;
  if (!at) return out;

  auto active_set = [&](const Eigen::VectorXd& x, bool& degenerate) {
    const auto params = dcots::with_tuned(base, x.head(ne), x.tail(ne));
    const auto sol = dcots::solve_dc_opf(net, params, dcots::DcOpfMode::model6_inner);
    degenerate = sol.degenerate;
    return sol.active_set;
  };
  bool degenerate = false;
  const auto active0 = active_set(x0, degenerate);

  std::mt19937 rng(seed);
  std::normal_distribution<double> normal;
  const double h = 1e-6 * std::max(1.0, x0.lpNorm<Eigen::Infinity>());
  for (int attempt = 0; attempt < 20 * directions && out.accepted < directions; ++attempt) {
    Eigen::VectorXd d(2 * ne);
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = normal(rng);
    d.normalize();
    bool dp = false, dm = false;
    if (degenerate || active_set(x0 + h * d, dp) != active0 || active_set(x0 - h * d, dm) != active0 || dp || dm) {
      ++out.redrawn;
      continue;
    }
    const auto plus = fn(x0 + h * d), minus = fn(x0 - h * d);
    if (!plus || !minus) {
      ++out.redrawn;
      continue;
    }
    const double fd = (plus->value - minus->value) / (2.0 * h);
    const double an = at->grad.dot(d);
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-10});
    out.worst_relative_error = std::max(out.worst_relative_error, std::abs(fd - an) / denom);
    ++out.accepted;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force switching oracles.

struct BruteForce {
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> opened;
  int feasible = 0;
};

/// Every subset of `candidates`, each solved by the dense reference on the reduced network.
inline BruteForce enumerate_dense(const dcots::NetworkCase& net, const std::vector<int>& candidates, double c_prof) {
  BruteForce out;
  const auto k = candidates.size();
  for (unsigned long mask = 0; mask < (1UL << k); ++mask) {
    std::vector<int> opened;
    for (std::size_t j = 0; j < k; ++j)
      if (mask & (1UL << j)) opened.push_back(candidates[j]);
    if (!serves_all_load(net, opened)) continue;
    const dcots::NetworkCase reduced = without_lines(net, opened);
    const double cost = dense_dc_opf(reduced, dcots::cold_start(reduced), dcots::DcOpfMode::model6_inner);
    if (!std::isfinite(cost)) continue;
    ++out.feasible;
    const double total = cost + c_prof * static_cast<double>(opened.size());
    if (total < out.best) {
      out.best = total;
      out.opened = opened;
    }
  }
  return out;
}

/// Every subset of `candidates`, each solved as a fixed-status node of the switching model.
inline BruteForce enumerate_fixed(const dcots::NetworkCase& net, const dcots::DcParameters& params, const dcots::OtsConfig& cfg,
                           const std::vector<int>& candidates) {
  BruteForce out;
  const auto k = candidates.size();
  for (unsigned long mask = 0; mask < (1UL << k); ++mask) {
    std::vector<int> u(net.num_branches(), 1);
    for (std::size_t j = 0; j < k; ++j)
      if (mask & (1UL << j)) u[static_cast<std::size_t>(candidates[j] - 1)] = 0;
    const dcots::OtsSolution s = dcots::solve_fixed_statuses(net, params, cfg, u);
    if (s.status != dcots::OtsStatus::optimal) continue;
    ++out.feasible;
    if (s.objective < out.best) {
      out.best = s.objective;
      out.opened = s.opened_lines;
    }
  }
  return out;
}

inline std::vector<int> all_lines(const dcots::NetworkCase& net) {
  std::vector<int> v(net.num_branches());
  for (std::size_t e = 0; e < v.size(); ++e) v[e] = static_cast<int>(e + 1);
  return v;
}

}  // namespace testing
