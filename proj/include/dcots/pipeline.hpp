#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcots/ac_solver.hpp"
#include "dcots/dc_ots.hpp"
#include "dcots/network.hpp"
#include "dcots/tuner.hpp"

namespace dcots {

enum class Method { acopf_base, dc_ots, c_dc_ots, o_dc_ots, exhaustive };

/// "acopf-base", "dc-ots", "c-dc-ots", "o-dc-ots", "exhaustive".
const char* to_string(Method method);
Method method_from_string(const std::string& name);

struct PipelineConfig {
  TunerConfig tuner;
  OtsConfig ots;
  AcOpfOptions ac;
  bool tune = true;         // false keeps the initial parameters
  bool hot_start = false;   // tuner initialization
  // Fixed switching penalty; when empty the penalty is chosen by validating
  // c_prof_factors x c_prof_fraction x (traditional DC-OTS dispatch cost).
  std::optional<double> c_prof;
  double c_prof_fraction = 0.01;
  std::vector<double> c_prof_factors = {0.5, 1.0, 2.0};
  // Exhaustive search.
  int max_open = 1;
  std::vector<int> exhaustive_candidates;  // 1-based; empty means every branch
  long exhaustive_budget = 5000;
};

struct Timings {
  double phase1_seconds = 0.0;
  double tune_seconds = 0.0;
  double milp_seconds = 0.0;
  double validate_seconds = 0.0;
};

struct ValidationReport {
  std::string case_id;
  Method method = Method::acopf_base;
  std::vector<int> opened_lines;
  bool feasible = false;
  double ac_objective = 0.0;   // meaningful when feasible
  double base_objective = 0.0;
  double percent_delta = 0.0;  // meaningful when feasible
  std::string status;          // "ok", "Inf." or "ns."
  std::vector<Violation> violations;
  std::optional<double> c_prof;
  std::optional<double> final_loss;
  int topologies_evaluated = 0;
  Timings timings;
  std::string note;
};

/// Enumeration larger than the configured budget.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(long count, long budget)
      : std::runtime_error("exhaustive search needs " + std::to_string(count) + " topologies, budget " +
                           std::to_string(budget)),
        count_(count) {}
  long count() const noexcept { return count_; }

 private:
  long count_;
};

/// Phase 1 failure: the full-topology AC-OPF did not converge.
class BaseCaseFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// AC-OPF on the topology with `opened` lines removed. Islanding topologies are
/// reported infeasible without solving.
ValidationReport validate_topology(const NetworkCase& net, const std::vector<int>& opened, const PipelineConfig& config,
                                   double base_objective);

ValidationReport run_acopf_base(const NetworkCase& net, const PipelineConfig& config);

/// Method dc_ots or c_dc_ots with cold-start parameters.
ValidationReport run_baseline(const NetworkCase& net, Method method, const PipelineConfig& config);

/// AC targets, parameter tuning, C-DC-OTS with tuned parameters, AC validation.
ValidationReport run_o_dc_ots(const NetworkCase& net, const PipelineConfig& config);

/// Number of status vectors with at most k of n lines opened.
long count_topologies(int n, int k);

/// Best AC-feasible topology with at most config.max_open opened lines.
ValidationReport exhaustive_ots(const NetworkCase& net, const PipelineConfig& config);

/// Runs each method in the order given.
std::vector<ValidationReport> compare_methods(const NetworkCase& net, const std::vector<Method>& methods,
                                              const PipelineConfig& config);

nlohmann::json to_json(const ValidationReport& report);
std::string reports_to_csv(const std::vector<ValidationReport>& reports);
/// Aligned plain-text table: method, opened lines, cost, delta, timings.
std::string reports_to_table(const std::vector<ValidationReport>& reports);

}  // namespace dcots
