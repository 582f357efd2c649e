#pragma once

#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dcots/network.hpp"

namespace dcots {

/// Line statuses u: in_service[e] is true when branch e is energized.
struct Topology {
  std::vector<bool> in_service;

  static Topology all_in(const NetworkCase& net);
  /// Topology with the given 1-based branch numbers switched out.
  static Topology with_open(const NetworkCase& net, const std::vector<int>& opened);
  std::vector<int> opened_lines() const;
  std::size_t size() const { return in_service.size(); }
};

/// Rejected topology: load or generation cut off from the slack bus.
class IslandingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Newton iteration hit a singular Jacobian.
class SingularJacobianError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws IslandingError unless the slack component reaches every bus with
/// nonzero demand or a generator with positive real-power capacity. Buses cut
/// off without either (e.g. a lone synchronous condenser) are de-energized and
/// their units held at zero output.
void require_no_islanding(const NetworkCase& net, const Topology& topology);
bool islands_load_or_generation(const NetworkCase& net, const Topology& topology);

struct Violation {
  std::string family;  // voltage, p_gen, q_gen, thermal, p_balance, q_balance, angle_diff, ref_angle
  int index = -1;      // 0-based bus / generator / branch position, -1 if not applicable
  double magnitude = 0.0;
};

enum class AcStatus { converged, infeasible, max_iter, failed };

struct AcSolution {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  Eigen::VectorXd p_gen;
  Eigen::VectorXd q_gen;
  // Indexed by branch position; out-of-service branches carry zero flow.
  Eigen::VectorXcd s_from;
  Eigen::VectorXcd s_to;
  double objective = 0.0;
  bool converged = false;
  AcStatus status = AcStatus::failed;
  int iterations = 0;
  double kkt_residual = 0.0;
  std::vector<Violation> violations;
};

const char* to_string(AcStatus status);

/// Complex power injected into branch e at its from end and at its to end,
/// evaluated from bus voltages. Includes taps, phase shifts and line charging.
std::pair<std::complex<double>, std::complex<double>> branch_flows(const NetworkCase& net, std::size_t e,
                                                                   const Eigen::VectorXd& v,
                                                                   const Eigen::VectorXd& theta);

/// Net complex injection mismatch per bus:
/// gen - demand - conj(Y_shunt) |V|^2 - sum of outgoing branch flows.
Eigen::VectorXcd nodal_mismatch(const NetworkCase& net, const Topology& topology, const AcSolution& sol);

struct PowerFlowSetpoints {
  Eigen::VectorXd p_gen;  // per generator (slack entries are ignored)
  Eigen::VectorXd v_set;  // per bus; used at generator and slack buses
};

/// Setpoints taken from the case file (Pg, Vg).
PowerFlowSetpoints default_setpoints(const NetworkCase& net);
/// Setpoints that reproduce a dispatch: generator outputs and bus voltages of `sol`.
PowerFlowSetpoints setpoints_from(const NetworkCase& net, const AcSolution& sol);

struct PowerFlowOptions {
  double tolerance = 1e-10;
  int max_iter = 50;
};

/// Polar Newton-Raphson power flow with slack, PV and PQ buses.
AcSolution newton_power_flow(const NetworkCase& net, const Topology& topology, const PowerFlowSetpoints& setpoints,
                             const PowerFlowOptions& options = {});

struct AcOpfOptions {
  int max_iter = 300;
  double feas_tol = 1e-8;
  double grad_tol = 1e-8;
  double comp_tol = 1e-8;
  double cost_tol = 1e-10;
  double step_fraction = 0.995;
  double barrier_reduction = 0.2;
  double cost_scale = 1e-4;
  // Run an elastic feasibility problem when the main solve fails, to tell an
  // infeasible topology apart from a numerical failure.
  bool diagnose_infeasibility = true;
};

/// Primal-dual interior-point AC-OPF on the in-service subnetwork.
AcSolution solve_ac_opf(const NetworkCase& net, const Topology& topology, const AcOpfOptions& options = {});

/// Signed apparent from-end flows: sign(Re S_f) |S_f|.
Eigen::VectorXd apparent_flow_targets(const AcSolution& sol);

/// Every violated family of the AC-OPF constraints (tolerance 1e-5), one entry
/// per family with its worst offender. Empty iff the point is feasible.
std::vector<Violation> check_feasibility(const NetworkCase& net, const Topology& topology, const AcSolution& sol,
                                         double tolerance = 1e-5);

/// Fixed-width violation table for terminal output.
std::string format_violations(const std::vector<Violation>& violations);

nlohmann::json to_json(const AcSolution& sol);
AcSolution ac_solution_from_json(const nlohmann::json& doc);

}  // namespace dcots
