// SPDX-License-Identifier: BSD-2-Clause
#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace dcots {

/// Convex quadratic program
///   minimize   1/2 x'Hx + c'x
///   subject to E x = e,  G x <= h.
/// Multipliers follow the Lagrangian 1/2 x'Hx + c'x + y'(Ex - e) + z'(Gx - h), z >= 0.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd c;
  Eigen::SparseMatrix<double> E;
  Eigen::VectorXd e;
  Eigen::SparseMatrix<double> G;
  Eigen::VectorXd h;

  Eigen::Index num_vars() const { return c.size(); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + c.dot(x); }
};

enum class QpStatus { optimal, infeasible, max_iter };

const char* to_string(QpStatus status);

struct QpOptions {
  double tolerance = 1e-10;
  int max_iter = 200;
  bool polish = true;
  // An inequality counts as active when its slack is below active_slack and its
  // multiplier above active_dual.
  double active_slack = 1e-7;
  double active_dual = 1e-6;
};

struct QpSolution {
  QpStatus status = QpStatus::max_iter;
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // equality multipliers
  Eigen::VectorXd z;  // inequality multipliers, >= 0
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;  // s'z summed
  std::vector<int> active;        // indices into the rows of G
  bool polished = false;
  // Some inequality is tight with a vanishing multiplier (no strict complementarity).
  bool degenerate = false;
};

/// Mehrotra predictor-corrector interior point, optionally followed by an
/// equality-constrained re-solve on the identified active set.
QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {},
                    const std::optional<Eigen::VectorXd>& x_start = std::nullopt);

/// Largest violation of E x = e and G x <= h at x.
double qp_infeasibility(const QpProblem& problem, const Eigen::VectorXd& x);

}  // namespace dcots
