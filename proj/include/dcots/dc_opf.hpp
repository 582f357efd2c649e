#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dcots/dc_params.hpp"
#include "dcots/network.hpp"
#include "dcots/qp.hpp"

namespace dcots {

/// Which DC-OPF constraint set to build.
///  - model4: balance C pg - pd - gamma = A' f with f = diag(b) A theta + rho,
///    thermal limits |f| <= S, angle-difference limits.
///  - model6_inner: balance without gamma or rho, thermal limits on the adjusted
///    flow |diag(b) A theta + psi| <= S, angle-difference limits and a bus-angle box.
enum class DcOpfMode { model4, model6_inner };

const char* to_string(DcOpfMode mode);

struct DcOpfOptions {
  double theta_box = 0.6;  // radians, model6_inner only
  QpOptions qp;
};

/// Meaning of one inequality row of the DC-OPF QP.
enum class DcRowKind { thermal_upper, thermal_lower, angle_upper, angle_lower, theta_upper, theta_lower, pg_upper, pg_lower };

struct DcRow {
  DcRowKind kind;
  int index;  // branch, bus or generator position
};

/// Unknowns are x = [p_gen (ng); theta (nb)].
/// Equality rows: nb balance rows, the reference-angle row, then one row per
/// generator with p_min == p_max (listed in `fixed_generators`).
struct DcLayout {
  int num_gens = 0;
  int num_buses = 0;
  std::vector<int> fixed_generators;
  std::vector<DcRow> rows;  // inequality rows in QP order
};

struct DcOpfSolution {
  DcOpfMode mode = DcOpfMode::model4;
  Eigen::VectorXd p_gen;
  Eigen::VectorXd theta;
  Eigen::VectorXd p_flow;     // diag(b) A theta (+ rho in model4)
  Eigen::VectorXd s_flow_dc;  // p_flow + psi
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd ineq_duals;
  std::vector<int> active_set;  // indices into layout.rows
  DcLayout layout;
  double objective = 0.0;  // $/h including constant costs
  int iterations = 0;
  bool degenerate = false;
  double balance_residual = 0.0;
};

/// QP without a feasible point. `residual` is the primal infeasibility the
/// solver stalled at.
class DcOpfInfeasible : public std::runtime_error {
 public:
  DcOpfInfeasible(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Assemble the QP for a mode. Exposed for oracle tests.
QpProblem build_dc_opf_qp(const NetworkCase& net, const DcParameters& params, DcOpfMode mode,
                          const DcOpfOptions& options, DcLayout* layout = nullptr);

/// Solve the DC-OPF QP. Throws DcOpfInfeasible when no dispatch satisfies the constraints.
DcOpfSolution solve_dc_opf(const NetworkCase& net, const DcParameters& params, DcOpfMode mode,
                           const DcOpfOptions& options = {});

struct SensitivityBundle {
  Eigen::MatrixXd d_flow_d_b;    // dS/db, |E| x |E|
  Eigen::MatrixXd d_flow_d_psi;  // dS/dpsi, |E| x |E|
  Eigen::MatrixXd d_theta_d_b;
  Eigen::MatrixXd d_theta_d_psi;
  Eigen::VectorXd g_b;
  Eigen::VectorXd g_psi;
  bool degenerate = false;
  std::string warning;
};

/// Implicit differentiation of the KKT system restricted to the active set.
/// Fills the Jacobians only; the gradient vectors are left empty.
SensitivityBundle differentiate_kkt(const NetworkCase& net, const DcParameters& params, const DcOpfSolution& sol,
                                    const DcOpfOptions& options = {});

/// L = ||s_dc - s_ac||^2 / |E|.
double loss(const Eigen::VectorXd& s_flow_dc, const Eigen::VectorXd& s_flow_ac);

/// g = (2/|E|) J' (s_dc - s_ac) for the b and psi blocks.
std::pair<Eigen::VectorXd, Eigen::VectorXd> loss_gradients(const SensitivityBundle& bundle,
                                                           const Eigen::VectorXd& s_flow_dc,
                                                           const Eigen::VectorXd& s_flow_ac);

nlohmann::json to_json(const DcOpfSolution& sol);

}  // namespace dcots
