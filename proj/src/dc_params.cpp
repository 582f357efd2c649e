#include "dcots/dc_params.hpp"

#include <cmath>
#include <stdexcept>

#include "dcots/ac_solver.hpp"

namespace dcots {

namespace {

void check_vector(const Eigen::VectorXd& v, Eigen::Index expected, const char* name) {
  if (v.size() != expected)
    throw std::invalid_argument(std::string(name) + ": expected length " + std::to_string(expected) + ", got " +
                                std::to_string(v.size()));
  if (!v.allFinite()) throw std::invalid_argument(std::string(name) + ": non-finite entry");
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

void DcParameters::validate(const NetworkCase& net) const {
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  const auto nb = static_cast<Eigen::Index>(net.num_buses());
  check_vector(b, ne, "b");
  check_vector(gamma, nb, "gamma");
  check_vector(rho, ne, "rho");
  check_vector(psi, ne, "psi");
}

double sinc(double x) {
  if (std::abs(x) < 1e-6) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

DcParameters cold_start(const NetworkCase& net) {
  const auto ne = static_cast<Eigen::Index>(net.num_branches());
  DcParameters p;
  p.b.resize(ne);
  for (Eigen::Index e = 0; e < ne; ++e) {
    const auto& br = net.branches()[static_cast<std::size_t>(e)];
    p.b[e] = br.x / (br.r * br.r + br.x * br.x);
  }
  p.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_buses()));
  p.rho = Eigen::VectorXd::Zero(ne);
  p.psi = Eigen::VectorXd::Zero(ne);
  p.provenance = Provenance::cold;
  return p;
}

DcParameters hot_start(const NetworkCase& net, const AcSolution& nominal) {
  if (!nominal.converged) throw std::invalid_argument("hot_start needs a converged AC solution");
  if (nominal.v.size() != static_cast<Eigen::Index>(net.num_buses()))
    throw std::invalid_argument("hot_start: nominal solution does not match the case");

  DcParameters p = cold_start(net);
  p.provenance = Provenance::hot;
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    const auto& br = net.branches()[e];
    const auto f = static_cast<Eigen::Index>(net.from_position(e));
    const auto t = static_cast<Eigen::Index>(net.to_position(e));
    const auto idx = static_cast<Eigen::Index>(e);
    const double vf = nominal.v[f] / br.tap;
    const double vt = nominal.v[t];
    const double delta = nominal.theta[f] - nominal.theta[t];
    const double g = branch_admittance(br).series.real();

    p.b[idx] *= vf * vt * sinc(delta);
    const double from_loss = g * vf * (vf - vt * std::cos(delta));
    const double to_loss = g * vt * (vt - vf * std::cos(delta));
    p.rho[idx] = from_loss;
    p.gamma[f] += from_loss;
    p.gamma[t] += to_loss;
  }
  return p;
}

DcParameters with_tuned(const DcParameters& base, const Eigen::VectorXd& b, const Eigen::VectorXd& psi) {
  if (b.size() != base.b.size() || psi.size() != base.psi.size())
    throw std::invalid_argument("with_tuned: parameter length mismatch");
  DcParameters p;
  p.b = b;
  p.psi = psi;
  p.gamma = Eigen::VectorXd::Zero(base.gamma.size());
  p.rho = Eigen::VectorXd::Zero(base.rho.size());
  p.provenance = Provenance::tuned;
  return p;
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::cold: return "cold";
    case Provenance::hot: return "hot";
    case Provenance::tuned: return "tuned";
  }
  return "cold";
}

nlohmann::json to_json(const DcParameters& params) {
  return {{"provenance", to_string(params.provenance)},
          {"b", vector_to_json(params.b)},
          {"gamma", vector_to_json(params.gamma)},
          {"rho", vector_to_json(params.rho)},
          {"psi", vector_to_json(params.psi)}};
}

DcParameters dc_parameters_from_json(const nlohmann::json& doc) {
  DcParameters p;
  p.b = vector_from_json(doc.at("b"));
  p.gamma = vector_from_json(doc.at("gamma"));
  p.rho = vector_from_json(doc.at("rho"));
  p.psi = vector_from_json(doc.at("psi"));
  const auto prov = doc.value("provenance", std::string("cold"));
  if (prov == "cold") p.provenance = Provenance::cold;
  else if (prov == "hot") p.provenance = Provenance::hot;
  else if (prov == "tuned") p.provenance = Provenance::tuned;
  else throw std::invalid_argument("unknown provenance '" + prov + "'");
  return p;
}

}  // namespace dcots
