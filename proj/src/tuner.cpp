#include "dcots/tuner.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace dcots {

void TunerConfig::validate() const {
  if (!(alpha1 > 0.0 && alpha1 < alpha2 && alpha2 < 1.0))
    throw std::invalid_argument("tuner: require 0 < alpha1 < alpha2 < 1");
  if (max_iter < 1) throw std::invalid_argument("tuner: max_iter must be >= 1");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("tuner: epsilon must be >= 0");
  if (max_halvings < 0) throw std::invalid_argument("tuner: max_halvings must be >= 0");
  if (restart_period < 0) throw std::invalid_argument("tuner: restart_period must be >= 0");
  if (!(loss_change_tol >= 0.0)) throw std::invalid_argument("tuner: loss_change_tol must be >= 0");
}

const char* to_string(TunerStatus status) {
  switch (status) {
    case TunerStatus::converged: return "converged";
    case TunerStatus::max_iter: return "max_iter";
    case TunerStatus::line_search_failed: return "line_search_failed";
  }
  return "max_iter";
}

std::string TunerTrace::to_csv() const {
  std::ostringstream out;
  out << "iter,loss,grad_norm,alpha,beta\n";
  for (const auto& r : records)
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.iter, r.loss, r.grad_norm, r.alpha, r.beta);
  return out.str();
}

WolfeResult wolfe_search(const Eigen::VectorXd& x, const Eigen::VectorXd& p, const Evaluation& at_x,
                         const Objective& fn, double alpha1, double alpha2, int max_halvings) {
  const double slope = at_x.grad.dot(p);
  if (!(slope < 0.0)) throw std::invalid_argument("wolfe_search: p is not a descent direction");

  WolfeResult best;
  double alpha = 1.0;
  for (int k = 0; k <= max_halvings; ++k, alpha *= 0.5) {
    Eigen::VectorXd trial = x + alpha * p;
    const auto ev = fn(trial);
    ++best.evaluations;
    if (!ev || !std::isfinite(ev->value)) continue;
    const bool armijo = ev->value <= at_x.value + alpha1 * alpha * slope;
    if (!armijo) continue;
    const bool curvature = std::abs(ev->grad.dot(p)) <= alpha2 * std::abs(slope);
    if (curvature) {
      best.ok = true;
      best.armijo_only = false;
      best.alpha = alpha;
      best.x = std::move(trial);
      best.eval = *ev;
      return best;
    }
    if (!best.armijo_only || ev->value < best.eval.value) {
      best.armijo_only = true;
      best.alpha = alpha;
      best.x = std::move(trial);
      best.eval = *ev;
    }
  }
  best.ok = best.armijo_only;
  return best;
}

double polak_ribiere(const Eigen::VectorXd& g_new, const Eigen::VectorXd& g_old) {
  const double denom = g_old.squaredNorm();
  if (!(denom > 0.0)) throw std::invalid_argument("polak_ribiere: zero previous gradient");
  return g_new.dot(g_new - g_old) / denom;
}

MinimizeResult conjugate_gradient(const Objective& fn, const Eigen::VectorXd& x0, const TunerConfig& config) {
  config.validate();
  MinimizeResult out;
  out.x = x0;
  const auto start = fn(x0);
  out.trace.evaluations = 1;
  if (!start || !std::isfinite(start->value)) throw std::runtime_error("tuner: objective not evaluable at the start");
  out.eval = *start;

  const int restart = config.restart_period > 0 ? config.restart_period : static_cast<int>(x0.size());
  Eigen::VectorXd p = -out.eval.grad;
  out.trace.records.push_back({0, out.eval.value, out.eval.grad.norm(), 0.0, 0.0, 0.0, false});
  out.trace.status = TunerStatus::max_iter;

  for (int k = 0; k < config.max_iter; ++k) {
    if (out.eval.grad.norm() <= config.epsilon) {
      out.trace.status = TunerStatus::converged;
      break;
    }
    if (!(out.eval.grad.dot(p) < 0.0)) p = -out.eval.grad;

    WolfeResult ws = wolfe_search(out.x, p, out.eval, fn, config.alpha1, config.alpha2, config.max_halvings);
    out.trace.evaluations += ws.evaluations;
    if (!ws.ok) {
      out.trace.status = TunerStatus::line_search_failed;
      break;
    }

    const double beta_raw = polak_ribiere(ws.eval.grad, out.eval.grad);
    double beta = config.plain_polak_ribiere ? beta_raw : std::max(beta_raw, 0.0);
    if ((k + 1) % restart == 0) beta = 0.0;
    p = -ws.eval.grad + beta * p;

    const double previous = out.eval.value;
    out.x = std::move(ws.x);
    out.eval = std::move(ws.eval);
    out.trace.records.push_back(
        {k + 1, out.eval.value, out.eval.grad.norm(), ws.alpha, beta, beta_raw, ws.armijo_only});

    if (config.loss_change_tol > 0.0 &&
        std::abs(previous - out.eval.value) <= config.loss_change_tol * (1.0 + std::abs(previous))) {
      out.trace.status = TunerStatus::converged;
      break;
    }
  }
  if (out.trace.status == TunerStatus::max_iter && out.eval.grad.norm() <= config.epsilon)
    out.trace.status = TunerStatus::converged;
  return out;
}

Objective flow_mismatch_objective(const NetworkCase& net, const DcParameters& base, const Eigen::VectorXd& targets,
                                  const DcOpfOptions& options) {
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  if (targets.size() != ne) throw std::invalid_argument("tuner: target length differs from branch count");
  return [&net, base, targets, options, ne](const Eigen::VectorXd& x) -> std::optional<Evaluation> {
    const DcParameters params = with_tuned(base, x.head(ne), x.tail(ne));
    try {
      const DcOpfSolution sol = solve_dc_opf(net, params, DcOpfMode::model6_inner, options);
      const SensitivityBundle bundle = differentiate_kkt(net, params, sol, options);
      auto [g_b, g_psi] = loss_gradients(bundle, sol.s_flow_dc, targets);
      Evaluation ev;
      ev.value = loss(sol.s_flow_dc, targets);
      ev.grad.resize(2 * ne);
      ev.grad << g_b, g_psi;
      if (!std::isfinite(ev.value) || !ev.grad.allFinite()) return std::nullopt;
      return ev;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
}

TuneResult tune(const NetworkCase& net, const DcParameters& init, const Eigen::VectorXd& targets,
                const TunerConfig& config) {
  init.validate(net);
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  const DcParameters base = with_tuned(init, init.b, init.psi);
  Eigen::VectorXd x0(2 * ne);
  x0 << base.b, base.psi;
  MinimizeResult res = conjugate_gradient(flow_mismatch_objective(net, base, targets, config.dc), x0, config);
  return {with_tuned(base, res.x.head(ne), res.x.tail(ne)), std::move(res.trace)};
}

}  // namespace dcots
