#include "interior_point.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcots::detail {

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

struct Conditions {
  double feas = 0.0;
  double grad = 0.0;
  double comp = 0.0;
  double max_violation = 0.0;
};

Conditions conditions(const NlpPoint& pt, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                      const Eigen::VectorXd& lam, const Eigen::VectorXd& mu, const Eigen::VectorXd& lx) {
  Conditions c;
  const double maxh = pt.h.size() ? std::max(0.0, pt.h.maxCoeff()) : 0.0;
  c.max_violation = std::max(inf_norm(pt.g), maxh);
  c.feas = c.max_violation / (1.0 + std::max(inf_norm(x), inf_norm(z)));
  c.grad = inf_norm(lx) / (1.0 + std::max(inf_norm(lam), inf_norm(mu)));
  c.comp = (z.size() ? z.dot(mu) : 0.0) / (1.0 + inf_norm(x));
  return c;
}

}  // namespace

IpmResult solve_ipm(const Nlp& nlp, const Eigen::VectorXd& x0, const IpmOptions& opt) {
  const Eigen::Index n = nlp.num_vars();
  NlpPoint pt;
  Eigen::VectorXd x = x0;
  nlp.evaluate(x, pt);
  const Eigen::Index neq = pt.g.size();
  const Eigen::Index niq = pt.h.size();
  const double cm = opt.cost_mult;

  constexpr double z0 = 1.0;
  double gamma = 1.0;
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(neq);
  Eigen::VectorXd z = Eigen::VectorXd::Constant(niq, z0);
  for (Eigen::Index i = 0; i < niq; ++i)
    if (pt.h[i] < -z0) z[i] = -pt.h[i];
  Eigen::VectorXd mu = z;
  for (Eigen::Index i = 0; i < niq; ++i)
    if (gamma / z[i] > z0) mu[i] = gamma / z[i];

  auto lagrangian_gradient = [&](const NlpPoint& p) {
    Eigen::VectorXd lx = cm * p.df;
    if (neq) lx.noalias() += p.dg.transpose() * lam;
    if (niq) lx.noalias() += p.dh.transpose() * mu;
    return lx;
  };

  Eigen::VectorXd lx = lagrangian_gradient(pt);
  Conditions cond = conditions(pt, x, z, lam, mu, lx);
  double f_prev = cm * pt.f;

  IpmResult res;
  auto finish = [&](bool converged, int iter) {
    res.x = x;
    res.lam = lam;
    res.mu = mu;
    res.z = z;
    res.f = pt.f;
    res.iterations = iter;
    res.converged = converged;
    res.feascond = cond.feas;
    res.gradcond = cond.grad;
    res.compcond = cond.comp;
    res.max_violation = cond.max_violation;
    return res;
  };

  if (cond.feas < opt.feas_tol && cond.grad < opt.grad_tol && cond.comp < opt.comp_tol) return finish(true, 0);

  Eigen::MatrixXd kkt(n + neq, n + neq);
  Eigen::VectorXd rhs(n + neq);
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    Eigen::MatrixXd lxx = nlp.lagrangian_hessian(x, lam, mu, cm);
    Eigen::VectorXd zinv = z.cwiseInverse();
    Eigen::MatrixXd dh_scaled = pt.dh.transpose() * zinv.asDiagonal();  // n x niq
    Eigen::MatrixXd m = lxx;
    if (niq) m.noalias() += dh_scaled * mu.asDiagonal() * pt.dh;
    Eigen::VectorXd nvec = lx;
    if (niq) nvec.noalias() += dh_scaled * (mu.cwiseProduct(pt.h) + Eigen::VectorXd::Constant(niq, gamma));

    kkt.setZero();
    kkt.topLeftCorner(n, n) = m;
    if (neq) {
      kkt.topRightCorner(n, neq) = pt.dg.transpose();
      kkt.bottomLeftCorner(neq, n) = pt.dg;
    }
    rhs.head(n) = -nvec;
    if (neq) rhs.tail(neq) = -pt.g;

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite() || (kkt * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-6 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
      // Singular step matrix: regularize the primal block and retry once.
      kkt.topLeftCorner(n, n).diagonal().array() += 1e-8 * (1.0 + m.diagonal().cwiseAbs().maxCoeff());
      if (neq) kkt.bottomRightCorner(neq, neq).diagonal().array() -= 1e-10;
      sol = kkt.fullPivLu().solve(rhs);
      if (!sol.allFinite()) {
        res.diverged = true;
        return finish(false, iter);
      }
    }
    Eigen::VectorXd dx = sol.head(n);
    Eigen::VectorXd dlam = sol.tail(neq);
    Eigen::VectorXd dz = -pt.h - z - pt.dh * dx;
    Eigen::VectorXd dmu = -mu + zinv.cwiseProduct(Eigen::VectorXd::Constant(niq, gamma) - mu.cwiseProduct(dz));

    if (opt.step_control) {
      // Shrink a full step that worsens both feasibility and stationarity until
      // the barrier Lagrangian agrees with its quadratic model.
      NlpPoint trial;
      nlp.evaluate(x + dx, trial);
      Eigen::VectorXd lx1 = cm * trial.df;
      if (neq) lx1.noalias() += trial.dg.transpose() * lam;
      if (niq) lx1.noalias() += trial.dh.transpose() * mu;
      const Conditions c1 = conditions(trial, x + dx, z, lam, mu, lx1);
      if (c1.feas > cond.feas && c1.grad > cond.grad) {
        const double log_z = niq ? z.array().log().sum() : 0.0;
        auto barrier_lagrangian = [&](const NlpPoint& p) {
          double l = cm * p.f;
          if (neq) l += lam.dot(p.g);
          if (niq) l += mu.dot(p.h + z);
          return l - gamma * log_z;
        };
        const double l0 = barrier_lagrangian(pt);
        double alpha = 1.0;
        for (int j = 0; j < opt.max_reductions; ++j) {
          const Eigen::VectorXd dx1 = alpha * dx;
          nlp.evaluate(x + dx1, trial);
          const double model = lx.dot(dx1) + 0.5 * dx1.dot(lxx * dx1);
          const double ratio = (barrier_lagrangian(trial) - l0) / model;
          if (ratio > 0.95 && ratio < 1.05) break;
          alpha *= 0.5;
        }
        dx *= alpha;
        dz *= alpha;
        dlam *= alpha;
        dmu *= alpha;
      }
    }

    double alpha_p = 1.0, alpha_d = 1.0;
    for (Eigen::Index i = 0; i < niq; ++i) {
      if (dz[i] < 0.0) alpha_p = std::min(alpha_p, opt.step_fraction * z[i] / -dz[i]);
      if (dmu[i] < 0.0) alpha_d = std::min(alpha_d, opt.step_fraction * mu[i] / -dmu[i]);
    }
    x += alpha_p * dx;
    z += alpha_p * dz;
    lam += alpha_d * dlam;
    mu += alpha_d * dmu;
    if (niq) gamma = opt.barrier_reduction * z.dot(mu) / static_cast<double>(niq);

    nlp.evaluate(x, pt);
    lx = lagrangian_gradient(pt);
    cond = conditions(pt, x, z, lam, mu, lx);
    const double f_now = cm * pt.f;
    const double costcond = std::abs(f_now - f_prev) / (1.0 + std::abs(f_prev));
    f_prev = f_now;

    if (!x.allFinite() || !std::isfinite(pt.f) || inf_norm(x) > 1e10 || inf_norm(lam) > 1e12 ||
        inf_norm(mu) > 1e12) {
      res.diverged = true;
      return finish(false, iter);
    }
    if (cond.feas < opt.feas_tol && cond.grad < opt.grad_tol && cond.comp < opt.comp_tol &&
        costcond < opt.cost_tol)
      return finish(true, iter);
  }
  return finish(false, opt.max_iter);
}

}  // namespace dcots::detail
