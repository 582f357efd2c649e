#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcots/dc_opf.hpp"
#include "dcots/dc_params.hpp"
#include "dcots/network.hpp"

namespace dcots {

struct TunerConfig {
  double epsilon = 1e-5;   // stop when ||g|| <= epsilon
  int max_iter = 200;
  double alpha1 = 1e-4;    // Armijo constant
  double alpha2 = 0.4;     // curvature constant
  int max_halvings = 40;
  int restart_period = 0;  // 0 selects the number of variables
  bool plain_polak_ribiere = false;  // disable the beta >= 0 clamp
  // Optional secondary stop on |L_k - L_{k+1}| <= loss_change_tol (1 + |L_k|); 0 disables it.
  double loss_change_tol = 0.0;
  DcOpfOptions dc;

  /// Throws std::invalid_argument unless 0 < alpha1 < alpha2 < 1 and max_iter >= 1.
  void validate() const;
};

enum class TunerStatus { converged, max_iter, line_search_failed };

const char* to_string(TunerStatus status);

struct TunerRecord {
  int iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double alpha = 0.0;     // step that produced this iterate (0 for the start)
  double beta = 0.0;      // coefficient used for the next direction
  double beta_raw = 0.0;  // Polak-Ribiere value before the clamp
  bool armijo_only = false;  // line search fell back to the best Armijo point
};

struct TunerTrace {
  std::vector<TunerRecord> records;
  TunerStatus status = TunerStatus::max_iter;
  int evaluations = 0;

  /// Header "iter,loss,grad_norm,alpha,beta" and one row per record.
  std::string to_csv() const;
};

/// Loss and gradient at a point, or nothing when the point is not evaluable.
struct Evaluation {
  double value = 0.0;
  Eigen::VectorXd grad;
};
using Objective = std::function<std::optional<Evaluation>(const Eigen::VectorXd&)>;

struct WolfeResult {
  bool ok = false;
  bool armijo_only = false;
  double alpha = 0.0;
  Eigen::VectorXd x;
  Evaluation eval;
  int evaluations = 0;
};

/// Backtracking from alpha = 1 by halving until
///   L(x + a p) <= L(x) + alpha1 a g'p   and   |g(x + a p)'p| <= alpha2 |g'p|.
/// If no step meets both tests within max_halvings, the Armijo point with the
/// lowest loss is returned with armijo_only set; ok is false when none exists.
/// Throws std::invalid_argument when p is not a descent direction.
WolfeResult wolfe_search(const Eigen::VectorXd& x, const Eigen::VectorXd& p, const Evaluation& at_x,
                         const Objective& fn, double alpha1, double alpha2, int max_halvings);

/// g_new'(g_new - g_old) / g_old'g_old, without clamping.
double polak_ribiere(const Eigen::VectorXd& g_new, const Eigen::VectorXd& g_old);

struct MinimizeResult {
  Eigen::VectorXd x;
  Evaluation eval;
  TunerTrace trace;
};

/// Nonlinear conjugate gradient with Polak-Ribiere directions.
MinimizeResult conjugate_gradient(const Objective& fn, const Eigen::VectorXd& x0, const TunerConfig& config);

/// Loss and gradient of the adjusted DC flows against `targets` as a function
/// of the stacked vector [b; psi], using the model6_inner DC-OPF.
Objective flow_mismatch_objective(const NetworkCase& net, const DcParameters& base, const Eigen::VectorXd& targets,
                                  const DcOpfOptions& options = {});

struct TuneResult {
  DcParameters params;
  TunerTrace trace;
};

/// Tune b and psi from `init` so the DC flows track `targets`. The returned
/// parameters have gamma = rho = 0.
TuneResult tune(const NetworkCase& net, const DcParameters& init, const Eigen::VectorXd& targets,
                const TunerConfig& config = {});

}  // namespace dcots
