#pragma once

// Branch-end power flows in the polar pi-model and their local derivatives.
//
// Each end flow has the form
//   F = c vi^2 + vi vj (alpha cos d + beta sin d),   d = theta_i - theta_j,
// where i is the measuring end. Local variable order is [theta_i, theta_j, vi, vj].

#include <cmath>

#include <Eigen/Dense>

#include "dcots/network.hpp"

namespace dcots::detail {

struct FlowCoeffs {
  double c = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

struct BranchCoeffs {
  FlowCoeffs p_from, q_from, p_to, q_to;
};

BranchCoeffs branch_coeffs(const Branch& branch);

struct LocalFlow {
  double value = 0.0;
  Eigen::Vector4d grad = Eigen::Vector4d::Zero();
  Eigen::Matrix4d hess = Eigen::Matrix4d::Zero();
};

inline double flow_value(const FlowCoeffs& k, double theta_i, double theta_j, double vi, double vj) {
  const double d = theta_i - theta_j;
  return k.c * vi * vi + vi * vj * (k.alpha * std::cos(d) + k.beta * std::sin(d));
}

LocalFlow local_flow(const FlowCoeffs& k, double theta_i, double theta_j, double vi, double vj, bool with_hessian);

}  // namespace dcots::detail
