#pragma once

// Dense primal-dual interior-point method for
//   min f(x)  s.t.  g(x) = 0,  h(x) <= 0.
// Inequalities get slacks z > 0 (h + z = 0) and multipliers mu > 0.

#include <Eigen/Dense>

namespace dcots::detail {

struct NlpPoint {
  double f = 0.0;
  Eigen::VectorXd df;
  Eigen::VectorXd g;
  Eigen::MatrixXd dg;  // neq x n
  Eigen::VectorXd h;
  Eigen::MatrixXd dh;  // niq x n
};

class Nlp {
 public:
  virtual ~Nlp() = default;
  virtual Eigen::Index num_vars() const = 0;
  virtual void evaluate(const Eigen::VectorXd& x, NlpPoint& out) const = 0;
  /// cost_mult * d2f + sum lam_i d2g_i + sum mu_j d2h_j
  virtual Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                                             const Eigen::VectorXd& mu, double cost_mult) const = 0;
};

struct IpmOptions {
  int max_iter = 300;
  double feas_tol = 1e-8;
  double grad_tol = 1e-8;
  double comp_tol = 1e-8;
  double cost_tol = 1e-10;
  double step_fraction = 0.995;
  double barrier_reduction = 0.2;
  double cost_mult = 1.0;
  bool step_control = false;
  int max_reductions = 20;
};

struct IpmResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lam;
  Eigen::VectorXd mu;
  Eigen::VectorXd z;
  double f = 0.0;  // unscaled objective
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  double feascond = 0.0;
  double gradcond = 0.0;
  double compcond = 0.0;
  double max_violation = 0.0;  // max(|g|_inf, max h)
};

IpmResult solve_ipm(const Nlp& nlp, const Eigen::VectorXd& x0, const IpmOptions& options);

}  // namespace dcots::detail
