#include "dcots/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

namespace dcots {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Lazily computed quantities shared between methods of one case.
class CaseContext {
 public:
  CaseContext(const NetworkCase& net, const PipelineConfig& cfg) : net_(net), cfg_(cfg) {}

  const AcSolution& base_solution() {
    if (!base_) {
      const auto t0 = Clock::now();
      base_ = solve_ac_opf(net_, Topology::all_in(net_), cfg_.ac);
      base_seconds_ = seconds_since(t0);
      if (!base_->converged)
        throw BaseCaseFailure("AC-OPF on the full topology failed: " + format_violations(base_->violations));
    }
    return *base_;
  }
  double base_seconds() const { return base_seconds_; }

  const OtsSolution& traditional() {
    if (!traditional_) traditional_ = solve_traditional_dc_ots(net_, cfg_.ots);
    return *traditional_;
  }

  std::vector<double> c_prof_candidates() {
    if (cfg_.c_prof) return {*cfg_.c_prof};
    const double base = cfg_.c_prof_fraction * std::abs(traditional().dispatch_cost);
    std::vector<double> out;
    for (double f : cfg_.c_prof_factors) out.push_back(f * base);
    return out;
  }

 private:
  const NetworkCase& net_;
  const PipelineConfig& cfg_;
  std::optional<AcSolution> base_;
  double base_seconds_ = 0.0;
  std::optional<OtsSolution> traditional_;
};

ValidationReport base_report(const NetworkCase& net, CaseContext& ctx) {
  ValidationReport rep;
  rep.case_id = net.name();
  rep.method = Method::acopf_base;
  rep.feasible = true;
  rep.status = "ok";
  rep.ac_objective = rep.base_objective = ctx.base_solution().objective;
  rep.timings.validate_seconds = ctx.base_seconds();
  return rep;
}

/// C-DC-OTS for each c_prof candidate, validated in AC; keeps the cheapest
/// feasible outcome, otherwise the first candidate.
ValidationReport switch_and_validate(const NetworkCase& net, const DcParameters& params, const PipelineConfig& cfg,
                                     CaseContext& ctx, Method method) {
  const double base = ctx.base_solution().objective;
  std::optional<ValidationReport> best;
  double milp = 0.0, validate = 0.0;
  for (double c_prof : ctx.c_prof_candidates()) {
    OtsConfig ots = cfg.ots;
    ots.c_prof = c_prof;
    const auto t0 = Clock::now();
    const OtsSolution sol = solve_c_dc_ots(net, params, ots);
    milp += seconds_since(t0);
    ValidationReport rep;
    if (sol.status == OtsStatus::infeasible) {
      rep.case_id = net.name();
      rep.method = method;
      rep.status = "ns.";
      rep.note = "switching problem infeasible";
    } else {
      rep = validate_topology(net, sol.opened_lines, cfg, base);
      validate += rep.timings.validate_seconds;
      if (sol.status == OtsStatus::node_cap) rep.note = fmt::format("node cap reached, gap {:.3g}", sol.gap);
    }
    rep.c_prof = c_prof;
    const bool better = !best || (rep.feasible && (!best->feasible || rep.ac_objective < best->ac_objective));
    if (better) best = rep;
  }
  best->method = method;
  best->timings.milp_seconds = milp;
  best->timings.validate_seconds = validate;
  return *best;
}

ValidationReport run_baseline_in(const NetworkCase& net, Method method, const PipelineConfig& cfg, CaseContext& ctx) {
  if (method == Method::dc_ots) {
    const double base = ctx.base_solution().objective;
    const auto t0 = Clock::now();
    const OtsSolution& sol = ctx.traditional();
    const double milp = seconds_since(t0);
    ValidationReport rep;
    if (sol.status == OtsStatus::infeasible) {
      rep.case_id = net.name();
      rep.status = "ns.";
      rep.note = "switching problem infeasible";
    } else {
      rep = validate_topology(net, sol.opened_lines, cfg, base);
    }
    rep.method = Method::dc_ots;
    rep.timings.milp_seconds = milp;
    return rep;
  }
  if (method == Method::c_dc_ots) return switch_and_validate(net, cold_start(net), cfg, ctx, Method::c_dc_ots);
  throw std::invalid_argument(std::string("run_baseline: unsupported method ") + to_string(method));
}

ValidationReport run_o_dc_ots_in(const NetworkCase& net, const PipelineConfig& cfg, CaseContext& ctx) {
  const AcSolution& base = ctx.base_solution();
  const double phase1 = ctx.base_seconds();
  const auto t0 = Clock::now();
  DcParameters init = cold_start(net);
  if (cfg.hot_start) {
    const AcSolution nominal = newton_power_flow(net, Topology::all_in(net), setpoints_from(net, base));
    init = hot_start(net, nominal);
  }
  DcParameters params = init;
  std::optional<double> final_loss;
  if (cfg.tune) {
    const TuneResult tuned = tune(net, init, apparent_flow_targets(base), cfg.tuner);
    params = tuned.params;
    final_loss = tuned.trace.records.back().loss;
  }
  const double tune_seconds = seconds_since(t0);
  ValidationReport rep = switch_and_validate(net, params, cfg, ctx, Method::o_dc_ots);
  rep.final_loss = final_loss;
  rep.timings.phase1_seconds = phase1;
  rep.timings.tune_seconds = tune_seconds;
  return rep;
}

ValidationReport exhaustive_in(const NetworkCase& net, const PipelineConfig& cfg, CaseContext& ctx) {
  std::vector<int> cands = cfg.exhaustive_candidates;
  if (cands.empty())
    for (std::size_t e = 0; e < net.num_branches(); ++e) cands.push_back(static_cast<int>(e) + 1);
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  for (int line : cands)
    if (line < 1 || static_cast<std::size_t>(line) > net.num_branches())
      throw std::invalid_argument("exhaustive: candidate line " + std::to_string(line) + " out of range");
  const int k = std::min<int>(cfg.max_open, static_cast<int>(cands.size()));
  if (k < 0) throw std::invalid_argument("exhaustive: max_open must be >= 0");
  const long count = count_topologies(static_cast<int>(cands.size()), k);
  if (count > cfg.exhaustive_budget) throw BudgetExceeded(count, cfg.exhaustive_budget);

  const double base = ctx.base_solution().objective;
  ValidationReport best = base_report(net, ctx);
  int evaluated = 1;
  double validate = ctx.base_seconds();

  // Subsets by size, then lexicographically.
  for (int size = 1; size <= k; ++size) {
    std::vector<int> idx(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
      std::vector<int> opened;
      for (int i : idx) opened.push_back(cands[static_cast<std::size_t>(i)]);
      const ValidationReport rep = validate_topology(net, opened, cfg, base);
      validate += rep.timings.validate_seconds;
      if (rep.violations.empty() || rep.violations.front().family != "islanding") ++evaluated;
      if (rep.feasible && rep.ac_objective < best.ac_objective) best = rep;
      int pos = size - 1;
      while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == static_cast<int>(cands.size()) - size + pos) --pos;
      if (pos < 0) break;
      ++idx[static_cast<std::size_t>(pos)];
      for (int i = pos + 1; i < size; ++i) idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
    }
  }
  best.method = Method::exhaustive;
  best.topologies_evaluated = evaluated;
  best.timings = {};
  best.timings.validate_seconds = validate;
  if (cfg.exhaustive_candidates.size())
    best.note = fmt::format("candidates restricted to {} lines", cands.size());
  return best;
}

}  // namespace

const char* to_string(Method method) {
  switch (method) {
    case Method::acopf_base: return "acopf-base";
    case Method::dc_ots: return "dc-ots";
    case Method::c_dc_ots: return "c-dc-ots";
    case Method::o_dc_ots: return "o-dc-ots";
    case Method::exhaustive: return "exhaustive";
  }
  return "acopf-base";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::acopf_base, Method::dc_ots, Method::c_dc_ots, Method::o_dc_ots, Method::exhaustive})
    if (name == to_string(m)) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

ValidationReport validate_topology(const NetworkCase& net, const std::vector<int>& opened, const PipelineConfig& config,
                                   double base_objective) {
  ValidationReport rep;
  rep.case_id = net.name();
  rep.opened_lines = opened;
  std::sort(rep.opened_lines.begin(), rep.opened_lines.end());
  rep.base_objective = base_objective;
  const Topology topology = Topology::with_open(net, opened);
  const auto t0 = Clock::now();
  if (islands_load_or_generation(net, topology)) {
    rep.status = "Inf.";
    rep.violations.push_back({"islanding", -1, 1.0});
    rep.note = "topology islands load or generation";
    rep.timings.validate_seconds = seconds_since(t0);
    return rep;
  }
  const AcSolution sol = solve_ac_opf(net, topology, config.ac);
  rep.timings.validate_seconds = seconds_since(t0);
  rep.feasible = sol.converged;
  if (rep.feasible) {
    rep.status = "ok";
    rep.ac_objective = sol.objective;
    rep.percent_delta = (sol.objective - base_objective) / base_objective * 100.0;
  } else {
    rep.status = "Inf.";
    rep.violations = sol.violations;
    rep.note = std::string("AC-OPF ") + to_string(sol.status);
  }
  return rep;
}

ValidationReport run_acopf_base(const NetworkCase& net, const PipelineConfig& config) {
  CaseContext ctx(net, config);
  return base_report(net, ctx);
}

ValidationReport run_baseline(const NetworkCase& net, Method method, const PipelineConfig& config) {
  CaseContext ctx(net, config);
  return run_baseline_in(net, method, config, ctx);
}

ValidationReport run_o_dc_ots(const NetworkCase& net, const PipelineConfig& config) {
  CaseContext ctx(net, config);
  return run_o_dc_ots_in(net, config, ctx);
}

long count_topologies(int n, int k) {
  long total = 0;
  long binom = 1;
  for (int i = 0; i <= k && i <= n; ++i) {
    total += binom;
    binom = binom * (n - i) / (i + 1);
  }
  return total;
}

ValidationReport exhaustive_ots(const NetworkCase& net, const PipelineConfig& config) {
  CaseContext ctx(net, config);
  return exhaustive_in(net, config, ctx);
}

std::vector<ValidationReport> compare_methods(const NetworkCase& net, const std::vector<Method>& methods,
                                              const PipelineConfig& config) {
  CaseContext ctx(net, config);
  std::vector<ValidationReport> out;
  for (Method m : methods) {
    switch (m) {
      case Method::acopf_base: out.push_back(base_report(net, ctx)); break;
      case Method::dc_ots:
      case Method::c_dc_ots: out.push_back(run_baseline_in(net, m, config, ctx)); break;
      case Method::o_dc_ots: out.push_back(run_o_dc_ots_in(net, config, ctx)); break;
      case Method::exhaustive: out.push_back(exhaustive_in(net, config, ctx)); break;
    }
  }
  return out;
}

nlohmann::json to_json(const ValidationReport& r) {
  nlohmann::json j = {{"case", r.case_id},
                      {"method", to_string(r.method)},
                      {"opened_lines", r.opened_lines},
                      {"status", r.status},
                      {"feasible", r.feasible},
                      {"base_objective", r.base_objective},
                      {"timings",
                       {{"phase1_seconds", r.timings.phase1_seconds},
                        {"tune_seconds", r.timings.tune_seconds},
                        {"milp_seconds", r.timings.milp_seconds},
                        {"validate_seconds", r.timings.validate_seconds}}}};
  if (r.feasible) {
    j["ac_objective"] = r.ac_objective;
    j["percent_delta"] = r.percent_delta;
  } else {
    j["violations"] = nlohmann::json::array();
    for (const auto& v : r.violations)
      j["violations"].push_back({{"family", v.family}, {"index", v.index}, {"magnitude", v.magnitude}});
  }
  if (r.c_prof) j["c_prof"] = *r.c_prof;
  if (r.final_loss) j["final_loss"] = *r.final_loss;
  if (r.topologies_evaluated) j["topologies_evaluated"] = r.topologies_evaluated;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

std::string reports_to_csv(const std::vector<ValidationReport>& reports) {
  std::ostringstream out;
  out << "case,method,opened_lines,status,ac_objective,percent_delta,c_prof,phase1_seconds,tune_seconds,milp_seconds,"
         "validate_seconds\n";
  for (const auto& r : reports) {
    std::string lines;
    for (std::size_t i = 0; i < r.opened_lines.size(); ++i) lines += (i ? " " : "") + std::to_string(r.opened_lines[i]);
    out << fmt::format("{},{},{},{},{},{},{},{:.6g},{:.6g},{:.6g},{:.6g}\n", r.case_id, to_string(r.method), lines,
                       r.status, r.feasible ? fmt::format("{:.6g}", r.ac_objective) : "",
                       r.feasible ? fmt::format("{:.6g}", r.percent_delta) : "",
                       r.c_prof ? fmt::format("{:.6g}", *r.c_prof) : "", r.timings.phase1_seconds,
                       r.timings.tune_seconds, r.timings.milp_seconds, r.timings.validate_seconds);
  }
  return out.str();
}

std::string reports_to_table(const std::vector<ValidationReport>& reports) {
  std::ostringstream out;
  out << fmt::format("{:<12} {:<22} {:>14} {:>10} {:>22}\n", "method", "opened", "cost ($/h)", "delta",
                     "time (s)");
  for (const auto& r : reports) {
    const std::string cost = r.feasible ? fmt::format("{:.6g}", r.ac_objective) : r.status;
    const std::string delta = r.feasible ? fmt::format("{:+.3f}%", r.percent_delta) : "";
    std::string time;
    if (r.method == Method::o_dc_ots)
      time = fmt::format("{:.3g} + {:.3g}", r.timings.tune_seconds, r.timings.milp_seconds);
    else if (r.method == Method::acopf_base || r.method == Method::exhaustive)
      time = fmt::format("{:.3g}", r.timings.validate_seconds);
    else
      time = fmt::format("{:.3g}", r.timings.milp_seconds);
    out << fmt::format("{:<12} {:<22} {:>14} {:>10} {:>22}\n", to_string(r.method),
                       format_opened_lines(r.opened_lines), cost, delta, time);
  }
  return out.str();
}

}  // namespace dcots
