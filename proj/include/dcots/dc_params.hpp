#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dcots/network.hpp"

namespace dcots {

struct AcSolution;

enum class Provenance { cold, hot, tuned };

/// Parameters of one DC power-flow model instance:
/// flow_e = b_e (theta_from - theta_to) + rho_e, nodal bias gamma, and the
/// apparent-flow offset psi added to flows in thermal limits.
struct DcParameters {
  Eigen::VectorXd b;      // per branch
  Eigen::VectorXd gamma;  // per bus
  Eigen::VectorXd rho;    // per branch
  Eigen::VectorXd psi;    // per branch
  Provenance provenance = Provenance::cold;

  /// Throws std::invalid_argument on length mismatch or non-finite entries.
  void validate(const NetworkCase& net) const;
};

/// b = Im(-1 / (r + jx)) = x / (r^2 + x^2); all biases zero.
DcParameters cold_start(const NetworkCase& net);

/// Localized-loss parameters linearized around a converged AC solution.
/// Transformer branches use the tap-scaled from-voltage v_from / tap.
DcParameters hot_start(const NetworkCase& net, const AcSolution& nominal);

/// Tuned parameters: b and psi replaced, gamma and rho forced to zero.
DcParameters with_tuned(const DcParameters& base, const Eigen::VectorXd& b, const Eigen::VectorXd& psi);

/// sin(x)/x with the removable singularity handled by a series for |x| < 1e-6.
double sinc(double x);

nlohmann::json to_json(const DcParameters& params);
DcParameters dc_parameters_from_json(const nlohmann::json& doc);

const char* to_string(Provenance p);

}  // namespace dcots
