#include "dcots/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcots {

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

/// Largest step in (0, 1] keeping v + alpha dv >= 0, scaled by `fraction`.
double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv, double fraction) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -fraction * v[i] / dv[i]);
  return alpha;
}

struct Residuals {
  Eigen::VectorXd dual, eq, ineq;
  double mu = 0.0;
};

Residuals residuals(const QpProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& z, const Eigen::VectorXd& s) {
  Residuals r;
  r.dual = p.H * x + p.c;
  if (p.E.rows()) r.dual += p.E.transpose() * y;
  if (p.G.rows()) r.dual += p.G.transpose() * z;
  r.eq = p.E.rows() ? Eigen::VectorXd(p.E * x - p.e) : Eigen::VectorXd();
  r.ineq = p.G.rows() ? Eigen::VectorXd(p.G * x + s - p.h) : Eigen::VectorXd();
  r.mu = s.size() ? s.dot(z) / static_cast<double>(s.size()) : 0.0;
  return r;
}

/// Quasi-definite system [M E'; E 0] factored with small primal and dual
/// regularization; solves are refined against the unregularized matrix.
class KktSystem {
 public:
  KktSystem(const Eigen::SparseMatrix<double>& m_block, const Eigen::SparseMatrix<double>& e_block)
      : n_(m_block.rows()), me_(e_block.rows()) {
    const Eigen::Index dim = n_ + me_;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(m_block.nonZeros() + 2 * e_block.nonZeros() + dim));
    for (Eigen::Index k = 0; k < m_block.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(m_block, k); it; ++it)
        trip.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index k = 0; k < e_block.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(e_block, k); it; ++it) {
        trip.emplace_back(n_ + it.row(), it.col(), it.value());
        trip.emplace_back(it.col(), n_ + it.row(), it.value());
      }
    exact_.resize(dim, dim);
    exact_.setFromTriplets(trip.begin(), trip.end());
    for (Eigen::Index i = 0; i < n_; ++i) trip.emplace_back(i, i, kPrimalReg);
    for (Eigen::Index i = 0; i < me_; ++i) trip.emplace_back(n_ + i, n_ + i, -kDualReg);
    Eigen::SparseMatrix<double> reg(dim, dim);
    reg.setFromTriplets(trip.begin(), trip.end());
    ldlt_.compute(reg);
    ok_ = ldlt_.info() == Eigen::Success;
  }

  bool ok() const { return ok_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd d = ldlt_.solve(rhs);
    for (int k = 0; k < kRefinements; ++k) d += ldlt_.solve(rhs - exact_ * d);
    return d;
  }

 private:
  static constexpr double kPrimalReg = 1e-9;
  static constexpr double kDualReg = 1e-9;
  static constexpr int kRefinements = 3;
  Eigen::Index n_, me_;
  Eigen::SparseMatrix<double> exact_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  bool ok_ = false;
};

/// Re-solve the KKT system with the active inequalities held as equalities.
bool polish(const QpProblem& p, const std::vector<int>& active, QpSolution& sol, double tol) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index me = p.E.rows();
  const auto ma = static_cast<Eigen::Index>(active.size());
  const Eigen::Index dim = n + me + ma;
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs(dim);
  kkt.topLeftCorner(n, n) = p.H;
  const Eigen::MatrixXd ed = p.E;
  if (me) {
    kkt.block(0, n, n, me) = ed.transpose();
    kkt.block(n, 0, me, n) = ed;
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> g_rows = p.G;
  for (Eigen::Index k = 0; k < ma; ++k) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(g_rows, active[static_cast<std::size_t>(k)]); it;
         ++it) {
      kkt(n + me + k, it.col()) = it.value();
      kkt(it.col(), n + me + k) = it.value();
    }
  }
  rhs.head(n) = -p.c;
  if (me) rhs.segment(n, me) = p.e;
  for (Eigen::Index k = 0; k < ma; ++k) rhs[n + me + k] = p.h[active[static_cast<std::size_t>(k)]];

  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) return false;
  const Eigen::VectorXd v = lu.solve(rhs);
  if (!v.allFinite()) return false;

  Eigen::VectorXd x = v.head(n);
  Eigen::VectorXd y = v.segment(n, me);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(p.G.rows());
  for (Eigen::Index k = 0; k < ma; ++k) z[active[static_cast<std::size_t>(k)]] = v[n + me + k];

  const double scale = 1.0 + std::max(inf_norm(p.h), inf_norm(p.e));
  if (qp_infeasibility(p, x) > tol * scale) return false;
  if (ma && z.minCoeff() < -tol * (1.0 + inf_norm(z))) return false;
  // The polished point must not be worse than the interior-point one.
  if (p.objective(x) > p.objective(sol.x) + 1e-9 * (1.0 + std::abs(p.objective(sol.x)))) return false;

  sol.x = x;
  sol.y = y;
  sol.z = z.cwiseMax(0.0);
  return true;
}

}  // namespace

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::max_iter: return "max_iter";
  }
  return "max_iter";
}

double qp_infeasibility(const QpProblem& p, const Eigen::VectorXd& x) {
  double worst = 0.0;
  if (p.E.rows()) worst = std::max(worst, inf_norm(p.E * x - p.e));
  if (p.G.rows()) worst = std::max(worst, std::max(0.0, (p.G * x - p.h).maxCoeff()));
  return worst;
}

QpSolution solve_qp(const QpProblem& p, const QpOptions& options, const std::optional<Eigen::VectorXd>& x_start) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index me = p.E.rows();
  const Eigen::Index mi = p.G.rows();

  Eigen::VectorXd x = x_start && x_start->size() == n ? *x_start : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(me);
  Eigen::VectorXd s = mi ? Eigen::VectorXd((p.h - p.G * x).cwiseMax(1.0)) : Eigen::VectorXd();
  Eigen::VectorXd z = Eigen::VectorXd::Ones(mi);

  const double scale_c = 1.0 + inf_norm(p.c);
  const double scale_b = 1.0 + std::max(inf_norm(p.e), inf_norm(p.h));
  const double tol = options.tolerance;
  const Eigen::SparseMatrix<double> gt = p.G.transpose();
  const Eigen::SparseMatrix<double> et = p.E.transpose();

  const Eigen::SparseMatrix<double> h_sparse = p.H.sparseView();

  QpSolution sol;
  Eigen::VectorXd rhs(n + me);
  int iter = 0;
  Residuals r = residuals(p, x, y, z, s);
  for (; iter < options.max_iter; ++iter) {
    const double res_p = std::max(inf_norm(r.eq), inf_norm(r.ineq));
    const double res_d = inf_norm(r.dual);
    if (res_p <= tol * scale_b && res_d <= tol * scale_c && r.mu <= tol * scale_c) {
      sol.status = QpStatus::optimal;
      break;
    }
    // Farkas ray: growing multipliers whose combination annihilates the
    // constraint matrix while pricing the right-hand side negatively.
    const double dual_size = std::max(inf_norm(y), inf_norm(z));
    if (dual_size > 1e6 && res_p > tol * scale_b) {
      Eigen::VectorXd ray = Eigen::VectorXd::Zero(n);
      double price = 0.0;
      if (me) {
        ray += et * y;
        price += p.e.dot(y);
      }
      if (mi) {
        ray += gt * z;
        price += p.h.dot(z);
      }
      if (inf_norm(ray) <= 1e-6 * dual_size && price < -1e-6 * dual_size) {
        sol.status = QpStatus::infeasible;
        break;
      }
    }
    if (!x.allFinite() || inf_norm(x) > 1e14 || dual_size > 1e14) {
      sol.status = QpStatus::infeasible;
      break;
    }

    const Eigen::VectorXd w = z.cwiseQuotient(s);  // Z S^-1
    Eigen::SparseMatrix<double> m_block = h_sparse;
    if (mi) m_block += gt * w.asDiagonal() * p.G;
    KktSystem kkt(m_block, p.E);
    if (!kkt.ok()) break;
    auto solve_direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                               Eigen::VectorXd& dz, Eigen::VectorXd& ds) {
      // dz = S^-1 (-rc + Z r_i + Z G dx), ds = -r_i - G dx
      Eigen::VectorXd t = mi ? Eigen::VectorXd((-rc + z.cwiseProduct(r.ineq)).cwiseQuotient(s)) : Eigen::VectorXd();
      rhs.head(n) = -r.dual;
      if (mi) rhs.head(n) -= gt * t;
      if (me) rhs.tail(me) = -r.eq;
      const Eigen::VectorXd d = kkt.solve(rhs);
      dx = d.head(n);
      dy = d.tail(me);
      if (mi) {
        const Eigen::VectorXd gdx = p.G * dx;
        dz = t + w.cwiseProduct(gdx);
        ds = -r.ineq - gdx;
      } else {
        dz.resize(0);
        ds.resize(0);
      }
    };

    Eigen::VectorXd dx, dy, dz, ds;
    // Predictor.
    const Eigen::VectorXd rc_aff = s.cwiseProduct(z);
    solve_direction(rc_aff, dx, dy, dz, ds);
    double sigma = 0.0;
    if (mi) {
      const double a_aff = std::min(max_step(s, ds, 1.0), max_step(z, dz, 1.0));
      const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(mi);
      sigma = std::pow(std::max(0.0, mu_aff) / std::max(r.mu, 1e-300), 3);
      sigma = std::min(sigma, 1.0);
      // Corrector.
      const Eigen::VectorXd rc =
          rc_aff + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(mi, sigma * r.mu);
      solve_direction(rc, dx, dy, dz, ds);
    }
    const double alpha = mi ? std::min(max_step(s, ds, 0.99), max_step(z, dz, 0.99)) : 1.0;
    x += alpha * dx;
    y += alpha * dy;
    if (mi) {
      z += alpha * dz;
      s += alpha * ds;
    }
    r = residuals(p, x, y, z, s);
  }

  sol.iterations = iter;
  if (iter == options.max_iter && sol.status != QpStatus::optimal) {
    const double res_p = std::max(inf_norm(r.eq), inf_norm(r.ineq));
    sol.status = res_p > 1e-6 * scale_b ? QpStatus::infeasible : QpStatus::max_iter;
  }
  sol.x = x;
  sol.y = y;
  sol.z = z;
  sol.primal_residual = std::max(inf_norm(r.eq), inf_norm(r.ineq));
  sol.dual_residual = inf_norm(r.dual);
  sol.complementarity = mi ? s.dot(z) : 0.0;

  if (sol.status == QpStatus::optimal && options.polish && mi) {
    std::vector<int> guess;
    for (Eigen::Index i = 0; i < mi; ++i)
      if (z[i] > s[i]) guess.push_back(static_cast<int>(i));
    sol.polished = polish(p, guess, sol, 1e-9);
  }

  if (mi) {
    const Eigen::VectorXd slack = p.h - p.G * sol.x;
    for (Eigen::Index i = 0; i < mi; ++i) {
      const bool tight = slack[i] < options.active_slack;
      if (tight && sol.z[i] > options.active_dual) sol.active.push_back(static_cast<int>(i));
      else if (tight) sol.degenerate = true;
    }
    if (sol.polished) {
      const Eigen::VectorXd rd = residuals(p, sol.x, sol.y, sol.z, slack.cwiseMax(0.0)).dual;
      sol.dual_residual = inf_norm(rd);
      sol.primal_residual = qp_infeasibility(p, sol.x);
      sol.complementarity = slack.cwiseMax(0.0).dot(sol.z);
    }
  }
  sol.objective = p.objective(sol.x);
  return sol;
}

}  // namespace dcots
