// SPDX-License-Identifier: BSD-2-Clause
// Command-line front end for the DC-OTS toolkit.
//
//   dcots acopf case.m [--open 3,7]
//   dcots dcopf case.m [--mode model4|model6] [--params p.json]
//   dcots tune case.m [--hot] [--max-iter N] [--eps E] [--alpha1 A] [--alpha2 A] [--trace t.csv] [--out p.json]
//   dcots ots case.m --variant traditional|custom|optimized [--cprof C] [--mip-gap G] [--theta-box T] [--candidates ...]
//   dcots validate case.m --open 12,13,14
//   dcots exhaustive case.m --max-open K [--candidates ...] [--budget N]
//   dcots compare case.m [more.m ...] [--methods ...] [--jobs N]
//
// Exit status: 0 success, 1 solver failure, 2 usage or input error.

#include <cmath>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dcots/ac_solver.hpp"
#include "dcots/dc_opf.hpp"
#include "dcots/dc_ots.hpp"
#include "dcots/dc_params.hpp"
#include "dcots/network.hpp"
#include "dcots/pipeline.hpp"
#include "dcots/tuner.hpp"

namespace {

using nlohmann::json;
using namespace dcots;

constexpr int kExitOk = 0;
constexpr int kExitSolver = 1;
constexpr int kExitUsage = 2;

/// Input problems map to exit status 2, everything else from a solver to 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sig6(double v) { return fmt::format("{:.6g}", v); }

/// Rounds every floating-point number to 6 significant digits so JSON and text agree.
json round6(const json& j) {
  if (j.is_number_float()) return std::stod(sig6(j.get<double>()));
  if (j.is_array() || j.is_object()) {
    json out = j;
    for (auto it = out.begin(); it != out.end(); ++it) *it = round6(*it);
    return out;
  }
  return j;
}

NetworkCase open_case(const std::string& path) {
  try {
    return load_case(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

struct Common {
  std::string case_path;
  std::string format = "text";
  std::string dump;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("case", c.case_path, "MATPOWER case file")->required()->check(CLI::ExistingFile);
  app->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"text", "json", "csv"}));
  app->add_option("--dump", c.dump, "Also write the full JSON result to this file");
}

/// Prints `doc` as JSON, or calls `text`/`csv` renderers. Always honours --dump.
void emit(const Common& c, const json& doc, const std::function<std::string()>& text,
          const std::function<std::string()>& csv) {
  const json rounded = round6(doc);
  if (!c.dump.empty()) write_file(c.dump, doc.dump(2) + "\n");
  if (c.format == "json") {
    std::cout << rounded.dump(2) << "\n";
  } else if (c.format == "csv") {
    std::cout << csv();
  } else {
    std::cout << text();
  }
}

std::string ac_text(const AcSolution& sol, const std::vector<int>& opened) {
  std::string out = fmt::format("status      {}\nopened      {}\n", to_string(sol.status), format_opened_lines(opened));
  if (sol.converged) out += fmt::format("objective   {}\n", sig6(sol.objective));
  out += fmt::format("iterations  {}\n", sol.iterations);
  if (!sol.converged) out += format_violations(sol.violations);
  return out;
}

std::vector<int> parse_lines(const std::string& spec) {
  std::vector<int> out;
  if (spec.empty() || spec == "--") return out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() && item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad line list entry '" + item + "'");
    }
  }
  return out;
}

struct TunerFlags {
  int max_iter = TunerConfig{}.max_iter;
  double eps = TunerConfig{}.epsilon;
  double alpha1 = TunerConfig{}.alpha1;
  double alpha2 = TunerConfig{}.alpha2;
  bool plain_pr = false;

  void add(CLI::App* app) {
    app->add_option("--max-iter", max_iter, "Tuner iteration cap")->check(CLI::PositiveNumber);
    app->add_option("--eps", eps, "Tuner gradient-norm tolerance")->check(CLI::NonNegativeNumber);
    app->add_option("--alpha1", alpha1, "Armijo constant");
    app->add_option("--alpha2", alpha2, "Curvature constant");
    app->add_flag("--plain-pr", plain_pr, "Polak-Ribiere without the beta >= 0 clamp");
  }
  TunerConfig config() const {
    TunerConfig c;
    c.max_iter = max_iter;
    c.epsilon = eps;
    c.alpha1 = alpha1;
    c.alpha2 = alpha2;
    c.plain_polak_ribiere = plain_pr;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

struct OtsFlags {
  std::optional<double> cprof;
  double mip_gap = 1e-4;
  double theta_box = 0.6;
  std::string candidates;
  long node_cap = OtsConfig{}.node_cap;
  bool literal_penalty = false;

  void add(CLI::App* app) {
    app->add_option("--cprof", cprof, "Switching penalty in $/h")->check(CLI::NonNegativeNumber);
    app->add_option("--mip-gap", mip_gap, "Relative optimality gap")->check(CLI::PositiveNumber);
    app->add_option("--theta-box", theta_box, "Bus angle bound in radians")->check(CLI::PositiveNumber);
    app->add_option("--candidates", candidates, "Comma-separated switchable lines (1-based)");
    app->add_option("--node-cap", node_cap, "Branch-and-bound node limit")->check(CLI::PositiveNumber);
    app->add_flag("--literal-penalty", literal_penalty, "Charge c_prof per in-service line instead of per opened line");
  }
  OtsConfig config() const {
    OtsConfig c;
    c.mip_gap = mip_gap;
    c.theta_box = theta_box;
    c.candidate_lines = parse_lines(candidates);
    c.node_cap = node_cap;
    c.penalty = literal_penalty ? PenaltySense::per_in_service_line : PenaltySense::per_opened_line;
    if (cprof) c.c_prof = *cprof;
    return c;
  }
};

std::string reports_text(const std::vector<ValidationReport>& reports) {
  std::string out;
  std::string current;
  std::vector<ValidationReport> group;
  auto flush = [&]() {
    if (group.empty()) return;
    out += current + "\n" + reports_to_table(group);
    for (const auto& r : group)
      if (!r.feasible && !r.violations.empty())
        out += fmt::format("  {} diagnosis:\n{}", to_string(r.method), format_violations(r.violations));
    group.clear();
  };
  for (const auto& r : reports) {
    if (r.case_id != current) {
      flush();
      current = r.case_id;
    }
    group.push_back(r);
  }
  flush();
  return out;
}

json reports_json(const std::vector<ValidationReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-tuned DC optimal transmission switching with AC validation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dcots 1.0.0");

  Common common;
  TunerFlags tuner_flags;
  OtsFlags ots_flags;
  std::string open_spec, mode = "model4", params_path, trace_path, out_path, variant = "optimized";
  std::string methods_spec = "acopf-base,dc-ots,c-dc-ots,o-dc-ots";
  std::vector<std::string> extra_cases;
  bool hot = false;
  int max_open = 1, jobs = 1;
  long budget = PipelineConfig{}.exhaustive_budget;

  auto* acopf = app.add_subcommand("acopf", "AC optimal power flow on the full or reduced topology");
  add_common(acopf, common);
  acopf->add_option("--open", open_spec, "Comma-separated lines to remove (1-based)");

  auto* dcopf = app.add_subcommand("dcopf", "DC optimal power flow");
  add_common(dcopf, common);
  dcopf->add_option("--mode", mode, "Constraint set")->check(CLI::IsMember({"model4", "model6"}));
  dcopf->add_option("--params", params_path, "DC parameters JSON (default cold start)");

  auto* tune_cmd = app.add_subcommand("tune", "Tune b and psi against AC-OPF apparent flows");
  add_common(tune_cmd, common);
  tuner_flags.add(tune_cmd);
  tune_cmd->add_flag("--hot", hot, "Initialize from hot-start parameters");
  tune_cmd->add_option("--trace", trace_path, "Write the iteration trace as CSV");
  tune_cmd->add_option("--out", out_path, "Write tuned parameters as JSON");

  auto* ots = app.add_subcommand("ots", "DC optimal transmission switching");
  add_common(ots, common);
  ots->add_option("--variant", variant, "Switching model")
      ->check(CLI::IsMember({"traditional", "custom", "optimized"}));
  ots_flags.add(ots);
  tuner_flags.add(ots);
  ots->add_option("--params", params_path, "DC parameters JSON (skips tuning)");

  auto* validate = app.add_subcommand("validate", "AC-OPF with the given lines opened");
  add_common(validate, common);
  validate->add_option("--open", open_spec, "Comma-separated lines to remove (1-based)")->required();

  auto* exhaustive = app.add_subcommand("exhaustive", "Enumerate topologies with at most K opened lines");
  add_common(exhaustive, common);
  exhaustive->add_option("--max-open", max_open, "Largest number of opened lines")->check(CLI::NonNegativeNumber);
  exhaustive->add_option("--candidates", ots_flags.candidates, "Comma-separated candidate lines (1-based)");
  exhaustive->add_option("--budget", budget, "Largest number of topologies to evaluate")->check(CLI::PositiveNumber);

  auto* compare = app.add_subcommand("compare", "Validate several switching methods");
  add_common(compare, common);
  compare->add_option("more_cases", extra_cases, "Additional case files")->check(CLI::ExistingFile);
  compare->add_option("--methods", methods_spec, "Comma-separated methods");
  compare->add_option("--jobs", jobs, "Cases solved concurrently")->check(CLI::PositiveNumber);
  compare->add_option("--max-open", max_open, "Largest number of opened lines for the exhaustive method");
  ots_flags.add(compare);
  tuner_flags.add(compare);
  compare->add_flag("--hot", hot, "Initialize the tuner from hot-start parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (acopf->parsed() || validate->parsed()) {
      const NetworkCase net = open_case(common.case_path);
      const std::vector<int> opened = parse_lines(open_spec);
      Topology topology;
      try {
        topology = Topology::with_open(net, opened);
      } catch (const std::out_of_range& e) {
        throw UsageError(e.what());
      }
      if (validate->parsed()) {
        PipelineConfig cfg;
        const AcSolution base = solve_ac_opf(net, Topology::all_in(net), cfg.ac);
        const ValidationReport rep = validate_topology(net, opened, cfg, base.converged ? base.objective : NAN);
        emit(common, to_json(rep), [&] { return reports_text({rep}); }, [&] { return reports_to_csv({rep}); });
        return kExitOk;
      }
      if (islands_load_or_generation(net, topology)) {
        std::cerr << "error: topology islands load or generation\n";
        return kExitSolver;
      }
      const AcSolution sol = solve_ac_opf(net, topology);
      emit(common, to_json(sol), [&] { return ac_text(sol, opened); },
           [&] {
             return fmt::format("status,objective,iterations\n{},{},{}\n", to_string(sol.status),
                                sol.converged ? sig6(sol.objective) : "", sol.iterations);
           });
      return sol.converged || sol.status == AcStatus::infeasible ? kExitOk : kExitSolver;
    }

    if (dcopf->parsed()) {
      const NetworkCase net = open_case(common.case_path);
      DcParameters params = cold_start(net);
      if (!params_path.empty()) {
        try {
          params = dc_parameters_from_json(read_json(params_path));
          params.validate(net);
        } catch (const UsageError&) {
          throw;
        } catch (const std::exception& e) {
          throw UsageError(e.what());
        }
      }
      const DcOpfSolution sol =
          solve_dc_opf(net, params, mode == "model4" ? DcOpfMode::model4 : DcOpfMode::model6_inner);
      emit(common, to_json(sol),
           [&] {
             std::string out = fmt::format("mode        {}\nobjective   {}\nactive      {}\n", to_string(sol.mode),
                                           sig6(sol.objective), sol.active_set.size());
             for (Eigen::Index g = 0; g < sol.p_gen.size(); ++g) out += fmt::format("pg[{}]  {}\n", g + 1, sig6(sol.p_gen[g]));
             return out;
           },
           [&] {
             std::string out = "generator,p_gen\n";
             for (Eigen::Index g = 0; g < sol.p_gen.size(); ++g) out += fmt::format("{},{}\n", g + 1, sig6(sol.p_gen[g]));
             return out;
           });
      return kExitOk;
    }

    if (tune_cmd->parsed()) {
      const NetworkCase net = open_case(common.case_path);
      const TunerConfig cfg = tuner_flags.config();
      const AcSolution base = solve_ac_opf(net, Topology::all_in(net));
      if (!base.converged) {
        std::cerr << "error: AC-OPF on the full topology failed\n" << format_violations(base.violations);
        return kExitSolver;
      }
      DcParameters init = cold_start(net);
      if (hot) init = hot_start(net, newton_power_flow(net, Topology::all_in(net), setpoints_from(net, base)));
      const TuneResult res = tune(net, init, apparent_flow_targets(base), cfg);
      if (!trace_path.empty()) write_file(trace_path, res.trace.to_csv());
      if (!out_path.empty()) write_file(out_path, to_json(res.params).dump(2) + "\n");
      const auto& last = res.trace.records.back();
      json doc = {{"status", to_string(res.trace.status)},
                  {"iterations", static_cast<int>(res.trace.records.size()) - 1},
                  {"initial_loss", res.trace.records.front().loss},
                  {"final_loss", last.loss},
                  {"grad_norm", last.grad_norm},
                  {"params", to_json(res.params)}};
      emit(common, doc,
           [&] {
             return fmt::format("status        {}\niterations    {}\ninitial loss  {}\nfinal loss    {}\n|g|           {}\n",
                                to_string(res.trace.status), res.trace.records.size() - 1,
                                sig6(res.trace.records.front().loss), sig6(last.loss), sig6(last.grad_norm));
           },
           [&] { return res.trace.to_csv(); });
      return kExitOk;
    }

    if (ots->parsed()) {
      const NetworkCase net = open_case(common.case_path);
      OtsConfig cfg = ots_flags.config();
      DcParameters params = cold_start(net);
      if (variant == "traditional") {
        cfg.c_prof = 0.0;
      } else {
        if (!ots_flags.cprof) {
          const OtsSolution trad = solve_traditional_dc_ots(net, cfg);
          cfg.c_prof = trad.status == OtsStatus::infeasible ? 0.0 : 0.01 * std::abs(trad.dispatch_cost);
        }
        if (!params_path.empty()) {
          params = dc_parameters_from_json(read_json(params_path));
        } else if (variant == "optimized") {
          const AcSolution base = solve_ac_opf(net, Topology::all_in(net));
          if (!base.converged) {
            std::cerr << "error: AC-OPF on the full topology failed\n";
            return kExitSolver;
          }
          params = tune(net, params, apparent_flow_targets(base), tuner_flags.config()).params;
        }
      }
      const OtsSolution sol = solve_c_dc_ots(net, params, cfg);
      json doc = to_json(sol);
      doc["variant"] = variant;
      doc["c_prof"] = cfg.c_prof;
      emit(common, doc,
           [&] {
             return fmt::format("variant     {}\nstatus      {}\nopened      {}\nobjective   {}\ndispatch    {}\nc_prof      {}\n"
                                "gap         {}\nnodes       {}\n",
                                variant, to_string(sol.status), format_opened_lines(sol.opened_lines),
                                sig6(sol.objective), sig6(sol.dispatch_cost), sig6(cfg.c_prof), sig6(sol.gap), sol.nodes);
           },
           [&] {
             std::string lines;
             for (std::size_t i = 0; i < sol.opened_lines.size(); ++i)
               lines += (i ? " " : "") + std::to_string(sol.opened_lines[i]);
             return fmt::format("variant,status,opened_lines,objective,dispatch_cost,gap,nodes\n{},{},{},{},{},{},{}\n",
                                variant, to_string(sol.status), lines, sig6(sol.objective), sig6(sol.dispatch_cost),
                                sig6(sol.gap), sol.nodes);
           });
      return sol.status == OtsStatus::infeasible ? kExitSolver : kExitOk;
    }

    if (exhaustive->parsed()) {
      const NetworkCase net = open_case(common.case_path);
      PipelineConfig cfg;
      cfg.max_open = max_open;
      cfg.exhaustive_candidates = parse_lines(ots_flags.candidates);
      cfg.exhaustive_budget = budget;
      ValidationReport rep;
      try {
        rep = exhaustive_ots(net, cfg);
      } catch (const BudgetExceeded& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
      }
      emit(common, to_json(rep), [&] { return reports_text({rep}); }, [&] { return reports_to_csv({rep}); });
      return kExitOk;
    }

    if (compare->parsed()) {
      std::vector<Method> methods;
      for (const auto& name : CLI::detail::split(methods_spec, ',')) {
        try {
          methods.push_back(method_from_string(name));
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }
      std::vector<std::string> paths{common.case_path};
      paths.insert(paths.end(), extra_cases.begin(), extra_cases.end());
      std::vector<NetworkCase> nets;
      for (const auto& p : paths) nets.push_back(open_case(p));

      PipelineConfig cfg;
      cfg.tuner = tuner_flags.config();
      cfg.ots = ots_flags.config();
      cfg.c_prof = ots_flags.cprof;
      cfg.hot_start = hot;
      cfg.max_open = max_open;
      cfg.exhaustive_candidates = cfg.ots.candidate_lines;

      std::vector<std::vector<ValidationReport>> per_case(nets.size());
      std::size_t next = 0;
      while (next < nets.size()) {
        std::vector<std::future<std::vector<ValidationReport>>> batch;
        for (int j = 0; j < jobs && next < nets.size(); ++j, ++next)
          batch.push_back(std::async(std::launch::async, [&, i = next] { return compare_methods(nets[i], methods, cfg); }));
        const std::size_t first = next - batch.size();
        for (std::size_t j = 0; j < batch.size(); ++j) per_case[first + j] = batch[j].get();
      }
      std::vector<ValidationReport> all;
      for (auto& v : per_case) all.insert(all.end(), v.begin(), v.end());
      emit(common, reports_json(all), [&] { return reports_text(all); }, [&] { return reports_to_csv(all); });
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const StructureError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitUsage;
}
