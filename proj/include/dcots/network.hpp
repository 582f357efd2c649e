// SPDX-License-Identifier: BSD-2-Clause
#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

namespace dcots {

/// Malformed case text. Carries the 1-based line number of the offending row.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Case data that parses but violates a structural invariant
/// (disconnected graph, duplicate slack, dangling generator, ...).
class StructureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BusKind { slack, generator, load };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::load;
  double p_demand = 0.0;
  double q_demand = 0.0;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;
  double shift = 0.0;
  double rate_a = 0.0;
  double ang_min = 0.0;
  double ang_max = 0.0;
  // Set when the file carried no thermal rating and rate_a was defaulted.
  bool unbounded = false;
  // 1-based row of the branch in the source file (out-of-service rows count).
  int source_index = 0;
};

struct Generator {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;
  // Setpoints from the file; used as power-flow defaults only.
  double p_set = 0.0;
  double v_set = 1.0;

  double cost(double p) const { return (c2 * p + c1) * p + c0; }
};

/// Immutable per-unit description of a transmission network.
///
/// Bus, branch and generator vectors keep file order. All solver code refers to
/// buses by their position in `buses`; `bus_position` maps file ids to positions.
class NetworkCase {
 public:
  NetworkCase() = default;
  NetworkCase(std::string name, double base_mva, std::vector<Bus> buses,
              std::vector<Branch> branches, std::vector<Generator> generators);

  const std::string& name() const { return name_; }
  double base_mva() const { return base_mva_; }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Generator>& generators() const { return generators_; }

  std::size_t num_buses() const { return buses_.size(); }
  std::size_t num_branches() const { return branches_.size(); }
  std::size_t num_generators() const { return generators_.size(); }

  int slack_bus() const { return buses_[slack_pos_].id; }
  std::size_t slack_position() const { return slack_pos_; }
  std::size_t bus_position(int id) const;
  std::size_t from_position(std::size_t e) const { return from_pos_[e]; }
  std::size_t to_position(std::size_t e) const { return to_pos_[e]; }
  std::size_t gen_position(std::size_t g) const { return gen_pos_[g]; }

  /// Sparse |E| x |N| branch-bus incidence (+1 from, -1 to).
  const Eigen::SparseMatrix<double>& incidence() const { return incidence_; }

  double total_p_demand() const;
  /// Total generation cost in $/h for a per-unit dispatch vector.
  double dispatch_cost(const Eigen::VectorXd& p_gen) const;

 private:
  std::string name_;
  double base_mva_ = 100.0;
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Generator> generators_;
  std::map<int, std::size_t> id_to_pos_;
  std::vector<std::size_t> from_pos_, to_pos_, gen_pos_;
  std::size_t slack_pos_ = 0;
  Eigen::SparseMatrix<double> incidence_;
};

/// Parse MATPOWER-format case text (mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch,
/// mpc.gencost). Converts to per-unit and drops out-of-service branches and
/// generators.
NetworkCase parse_case(std::string_view text, std::string name = "case");
NetworkCase load_case(const std::string& path);

/// Render a case back to MATPOWER text in source units.
std::string to_matpower(const NetworkCase& net);

/// Canonical JSON dump with deterministic field order.
nlohmann::json to_json(const NetworkCase& net);

Eigen::SparseMatrix<double> incidence_matrix(const NetworkCase& net);

struct BranchAdmittance {
  std::complex<double> series;
  std::complex<double> shunt_end;
};

/// Series admittance 1/(r + jx) and per-end charging admittance j b/2.
BranchAdmittance branch_admittance(const Branch& branch);

/// True if every bus is reachable from the slack bus over branches with
/// `in_service[e]` set.
bool is_connected(const NetworkCase& net, const std::vector<bool>& in_service);

/// Buses reachable from the slack over in-service branches.
std::vector<bool> slack_component(const NetworkCase& net, const std::vector<bool>& in_service);

}  // namespace dcots
