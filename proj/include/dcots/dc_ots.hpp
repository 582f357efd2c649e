#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dcots/dc_params.hpp"
#include "dcots/network.hpp"
#include "dcots/qp.hpp"

namespace dcots {

/// How the switching penalty enters the objective.
///   per_opened_line:     c_prof * sum(1 - u), a line is opened only when the
///                        dispatch saving exceeds c_prof.
///   per_in_service_line: c_prof * sum(u), the objective term as printed.
enum class PenaltySense { per_opened_line, per_in_service_line };

struct OtsConfig {
  double c_prof = 0.0;
  PenaltySense penalty = PenaltySense::per_opened_line;
  double theta_box = 0.6;
  std::optional<double> theta_big_m;      // default 2 theta_box + 1e-6
  std::optional<Eigen::VectorXd> flow_big_m;  // default from default_big_m
  double mip_gap = 1e-4;
  long node_cap = 200000;
  // 1-based branch numbers that may switch; empty means every branch.
  std::vector<int> candidate_lines;
  QpOptions qp = relaxation_defaults();

  static QpOptions relaxation_defaults() {
    QpOptions o;
    o.polish = false;
    return o;
  }

  void validate(const NetworkCase& net, const DcParameters& params) const;
};

struct BigM {
  Eigen::VectorXd flow;
  double theta = 0.0;
};

/// flow_e = |b_e| 2 theta_box + |rho_e| + |psi_e| + 1e-6, theta = 2 theta_box + 1e-6.
BigM default_big_m(const NetworkCase& net, const DcParameters& params, double theta_box);

enum class OtsStatus { optimal, node_cap, infeasible };

const char* to_string(OtsStatus status);

struct OtsSolution {
  OtsStatus status = OtsStatus::infeasible;
  std::vector<int> u;  // 1 in service, 0 open, per branch
  Eigen::VectorXd p_gen;
  Eigen::VectorXd theta;
  Eigen::VectorXd p_flow;
  double objective = 0.0;      // dispatch cost plus penalty
  double dispatch_cost = 0.0;  // $/h
  double bound = 0.0;          // proven lower bound on the objective
  double gap = 0.0;            // (objective - bound) / max(|objective|, 1)
  long nodes = 0;
  std::vector<int> opened_lines;  // 1-based
  double seconds = 0.0;
};

/// Branch-and-bound over line statuses with QP relaxations.
OtsSolution solve_c_dc_ots(const NetworkCase& net, const DcParameters& params, const OtsConfig& config);

/// Cold-start parameters, psi = 0 and no switching penalty.
OtsSolution solve_traditional_dc_ots(const NetworkCase& net, const OtsConfig& config);

/// Model with every status fixed to `u`; no branching. Status is infeasible if
/// the QP has no solution or `u` islands load or generation.
OtsSolution solve_fixed_statuses(const NetworkCase& net, const DcParameters& params, const OtsConfig& config,
                                 const std::vector<int>& u);

/// True when the in-service branches connect every bus with load or positive
/// generation capacity to the slack bus.
bool statuses_connected(const NetworkCase& net, const std::vector<int>& u);

nlohmann::json to_json(const OtsSolution& sol);

/// "3" / "11, 22" / "--" as in a table of opened lines.
std::string format_opened_lines(const std::vector<int>& opened);

}  // namespace dcots
