#include "dcots/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>

namespace dcots {

namespace {

constexpr double kDefaultAngleBound = std::numbers::pi / 6.0;

struct Table {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string_view strip_comment(std::string_view s) {
  const auto pos = s.find('%');
  return pos == std::string_view::npos ? s : s.substr(0, pos);
}

double parse_number(std::string_view token, std::size_t line) {
  if (token == "Inf" || token == "inf") return std::numeric_limits<double>::infinity();
  if (token == "-Inf" || token == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  const char* begin = token.data();
  if (!token.empty() && token.front() == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(line, "not a number: '" + std::string(token) + "'");
  }
  return value;
}

std::vector<double> parse_row(std::string_view row, std::size_t line) {
  std::vector<double> values;
  std::size_t i = 0;
  while (i < row.size()) {
    while (i < row.size() && (row[i] == ' ' || row[i] == '\t' || row[i] == ',' || row[i] == '\r')) ++i;
    if (i >= row.size()) break;
    std::size_t j = i;
    while (j < row.size() && row[j] != ' ' && row[j] != '\t' && row[j] != ',' && row[j] != '\r') ++j;
    values.push_back(parse_number(row.substr(i, j - i), line));
    i = j;
  }
  return values;
}

// Splits the text into lines and finds `mpc.<key> = [ ... ];` blocks and
// `mpc.<key> = value;` scalars.
class CaseText {
 public:
  explicit CaseText(std::string_view text) {
    std::size_t start = 0;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      lines_.push_back(text.substr(start, end - start));
      start = end + 1;
    }
  }

  std::optional<double> scalar(std::string_view key) const {
    for (std::size_t n = 0; n < lines_.size(); ++n) {
      auto line = trim(strip_comment(lines_[n]));
      auto rhs = assignment_rhs(line, key);
      if (!rhs) continue;
      auto value = trim(*rhs);
      if (!value.empty() && value.back() == ';') value.remove_suffix(1);
      return parse_number(trim(value), n + 1);
    }
    return std::nullopt;
  }

  std::optional<Table> table(std::string_view key) const {
    for (std::size_t n = 0; n < lines_.size(); ++n) {
      auto line = trim(strip_comment(lines_[n]));
      auto rhs = assignment_rhs(line, key);
      if (!rhs) continue;
      auto body = trim(*rhs);
      if (body.empty() || body.front() != '[') throw ParseError(n + 1, "expected '[' after mpc." + std::string(key));
      body.remove_prefix(1);
      Table table;
      std::size_t cur = n;
      std::string_view chunk = body;
      while (true) {
        bool closed = false;
        auto close = chunk.find(']');
        if (close != std::string_view::npos) {
          chunk = chunk.substr(0, close);
          closed = true;
        }
        // A physical line may hold several ';'-separated rows.
        std::size_t s = 0;
        while (s <= chunk.size()) {
          auto semi = chunk.find(';', s);
          auto piece = trim(chunk.substr(s, semi == std::string_view::npos ? std::string_view::npos : semi - s));
          if (!piece.empty()) {
            table.rows.push_back(parse_row(piece, cur + 1));
            table.lines.push_back(cur + 1);
          }
          if (semi == std::string_view::npos) break;
          s = semi + 1;
        }
        if (closed) break;
        ++cur;
        if (cur >= lines_.size()) throw ParseError(n + 1, "unterminated table mpc." + std::string(key));
        chunk = trim(strip_comment(lines_[cur]));
      }
      return table;
    }
    return std::nullopt;
  }

 private:
  static std::optional<std::string_view> assignment_rhs(std::string_view line, std::string_view key) {
    constexpr std::string_view prefix = "mpc.";
    if (line.substr(0, prefix.size()) != prefix) return std::nullopt;
    line.remove_prefix(prefix.size());
    if (line.substr(0, key.size()) != key) return std::nullopt;
    line.remove_prefix(key.size());
    line = trim(line);
    if (line.empty() || line.front() != '=') return std::nullopt;
    line.remove_prefix(1);
    return line;
  }

  std::vector<std::string_view> lines_;
};

void require_columns(const Table& t, std::size_t row, std::size_t count, const char* table) {
  if (t.rows[row].size() < count) {
    throw ParseError(t.lines[row], std::string("mpc.") + table + " row has " + std::to_string(t.rows[row].size()) +
                                       " columns, need at least " + std::to_string(count));
  }
}

const char* kind_name(BusKind k) {
  switch (k) {
    case BusKind::slack: return "slack";
    case BusKind::generator: return "generator";
    case BusKind::load: return "load";
  }
  return "load";
}

}  // namespace

NetworkCase::NetworkCase(std::string name, double base_mva, std::vector<Bus> buses, std::vector<Branch> branches,
                         std::vector<Generator> generators)
    : name_(std::move(name)),
      base_mva_(base_mva),
      buses_(std::move(buses)),
      branches_(std::move(branches)),
      generators_(std::move(generators)) {
  if (!(base_mva_ > 0.0)) throw StructureError("baseMVA must be positive");
  if (buses_.empty()) throw StructureError("case has no buses");

  bool have_slack = false;
  for (std::size_t i = 0; i < buses_.size(); ++i) {
    const auto& bus = buses_[i];
    if (!id_to_pos_.emplace(bus.id, i).second) throw StructureError("duplicate bus id " + std::to_string(bus.id));
    if (!(bus.v_min > 0.0) || bus.v_min > bus.v_max)
      throw StructureError("bus " + std::to_string(bus.id) + ": invalid voltage bounds");
    if (bus.kind == BusKind::slack) {
      if (have_slack) throw StructureError("duplicate slack bus " + std::to_string(bus.id));
      have_slack = true;
      slack_pos_ = i;
    }
  }
  if (!have_slack) throw StructureError("case has no slack bus");

  for (const auto& br : branches_) {
    if (br.x == 0.0) throw StructureError("branch " + std::to_string(br.source_index) + ": zero reactance");
    if (br.from_bus == br.to_bus) throw StructureError("branch " + std::to_string(br.source_index) + ": self loop");
    if (!(br.rate_a > 0.0)) throw StructureError("branch " + std::to_string(br.source_index) + ": rate_a must be > 0");
    if (br.ang_min > 0.0 || br.ang_max < 0.0)
      throw StructureError("branch " + std::to_string(br.source_index) + ": angle bounds must bracket zero");
    from_pos_.push_back(bus_position(br.from_bus));
    to_pos_.push_back(bus_position(br.to_bus));
  }
  for (const auto& gen : generators_) {
    auto it = id_to_pos_.find(gen.bus);
    if (it == id_to_pos_.end()) throw StructureError("generator at unknown bus " + std::to_string(gen.bus));
    if (gen.p_min > gen.p_max || gen.q_min > gen.q_max)
      throw StructureError("generator at bus " + std::to_string(gen.bus) + ": inverted bounds");
    if (gen.c2 < 0.0) throw StructureError("generator at bus " + std::to_string(gen.bus) + ": non-convex cost");
    gen_pos_.push_back(it->second);
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(2 * branches_.size());
  for (std::size_t e = 0; e < branches_.size(); ++e) {
    triplets.emplace_back(static_cast<int>(e), static_cast<int>(from_pos_[e]), 1.0);
    triplets.emplace_back(static_cast<int>(e), static_cast<int>(to_pos_[e]), -1.0);
  }
  incidence_.resize(static_cast<Eigen::Index>(branches_.size()), static_cast<Eigen::Index>(buses_.size()));
  incidence_.setFromTriplets(triplets.begin(), triplets.end());

  if (!is_connected(*this, std::vector<bool>(branches_.size(), true)))
    throw StructureError("network graph is disconnected");
}

std::size_t NetworkCase::bus_position(int id) const {
  auto it = id_to_pos_.find(id);
  if (it == id_to_pos_.end()) throw StructureError("unknown bus id " + std::to_string(id));
  return it->second;
}

double NetworkCase::total_p_demand() const {
  return std::accumulate(buses_.begin(), buses_.end(), 0.0,
                         [](double acc, const Bus& b) { return acc + b.p_demand; });
}

double NetworkCase::dispatch_cost(const Eigen::VectorXd& p_gen) const {
  double total = 0.0;
  for (std::size_t g = 0; g < generators_.size(); ++g) total += generators_[g].cost(p_gen[static_cast<Eigen::Index>(g)]);
  return total;
}

NetworkCase parse_case(std::string_view text, std::string name) {
  CaseText doc(text);
  const double base = doc.scalar("baseMVA").value_or(100.0);
  if (!(base > 0.0)) throw ParseError(0, "baseMVA must be positive");

  auto bus_table = doc.table("bus");
  auto gen_table = doc.table("gen");
  auto branch_table = doc.table("branch");
  auto cost_table = doc.table("gencost");
  if (!bus_table) throw ParseError(0, "missing mpc.bus");
  if (!gen_table) throw ParseError(0, "missing mpc.gen");
  if (!branch_table) throw ParseError(0, "missing mpc.branch");
  if (!cost_table) throw ParseError(0, "missing mpc.gencost");

  std::vector<Bus> buses;
  for (std::size_t r = 0; r < bus_table->rows.size(); ++r) {
    require_columns(*bus_table, r, 13, "bus");
    const auto& row = bus_table->rows[r];
    Bus bus;
    bus.id = static_cast<int>(row[0]);
    switch (static_cast<int>(row[1])) {
      case 1: bus.kind = BusKind::load; break;
      case 2: bus.kind = BusKind::generator; break;
      case 3: bus.kind = BusKind::slack; break;
      default: throw ParseError(bus_table->lines[r], "unsupported bus type " + std::to_string(static_cast<int>(row[1])));
    }
    bus.p_demand = row[2] / base;
    bus.q_demand = row[3] / base;
    bus.shunt_g = row[4] / base;
    bus.shunt_b = row[5] / base;
    bus.v_max = row[11];
    bus.v_min = row[12];
    buses.push_back(bus);
  }

  double total_demand = 0.0;
  for (const auto& b : buses) total_demand += b.p_demand;

  std::vector<Branch> branches;
  for (std::size_t r = 0; r < branch_table->rows.size(); ++r) {
    require_columns(*branch_table, r, 11, "branch");
    const auto& row = branch_table->rows[r];
    if (row[10] == 0.0) continue;
    Branch br;
    br.source_index = static_cast<int>(r + 1);
    br.from_bus = static_cast<int>(row[0]);
    br.to_bus = static_cast<int>(row[1]);
    br.r = row[2];
    br.x = row[3];
    br.b_charging = row[4];
    if (row[5] > 0.0) {
      br.rate_a = row[5] / base;
    } else {
      br.rate_a = 100.0 * std::max(total_demand, 1.0);
      br.unbounded = true;
    }
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.shift = row[9] * std::numbers::pi / 180.0;
    const bool has_angles = row.size() >= 13 && !(row[11] == 0.0 && row[12] == 0.0);
    br.ang_min = has_angles ? std::max(row[11], -360.0) * std::numbers::pi / 180.0 : -kDefaultAngleBound;
    br.ang_max = has_angles ? std::min(row[12], 360.0) * std::numbers::pi / 180.0 : kDefaultAngleBound;
    if (br.x == 0.0) throw ParseError(branch_table->lines[r], "branch with zero reactance");
    branches.push_back(br);
  }

  if (cost_table->rows.size() < gen_table->rows.size())
    throw ParseError(cost_table->lines.empty() ? 0 : cost_table->lines.back(), "mpc.gencost has fewer rows than mpc.gen");

  std::vector<Generator> gens;
  for (std::size_t r = 0; r < gen_table->rows.size(); ++r) {
    require_columns(*gen_table, r, 10, "gen");
    const auto& row = gen_table->rows[r];
    const auto& cost = cost_table->rows[r];
    require_columns(*cost_table, r, 4, "gencost");
    if (row[7] <= 0.0) continue;
    if (static_cast<int>(cost[0]) != 2)
      throw ParseError(cost_table->lines[r], "only polynomial (model 2) costs are supported");
    const auto ncoef = static_cast<std::size_t>(cost[3]);
    if (ncoef > 3) throw ParseError(cost_table->lines[r], "cost polynomial above degree 2");
    require_columns(*cost_table, r, 4 + ncoef, "gencost");
    double c[3] = {0.0, 0.0, 0.0};  // c2, c1, c0 in MW units
    for (std::size_t k = 0; k < ncoef; ++k) c[3 - ncoef + k] = cost[4 + k];

    Generator gen;
    gen.bus = static_cast<int>(row[0]);
    gen.p_set = row[1] / base;
    gen.q_max = row[3] / base;
    gen.q_min = row[4] / base;
    gen.v_set = row[5];
    gen.p_max = row[8] / base;
    gen.p_min = row[9] / base;
    gen.c2 = c[0] * base * base;
    gen.c1 = c[1] * base;
    gen.c0 = c[2];
    gens.push_back(gen);
  }

  return NetworkCase(std::move(name), base, std::move(buses), std::move(branches), std::move(gens));
}

NetworkCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open case file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto name = path;
  if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (auto dot = name.rfind(".m"); dot != std::string::npos && dot + 2 == name.size()) name.resize(dot);
  return parse_case(ss.str(), name);
}

std::string to_matpower(const NetworkCase& net) {
  const double base = net.base_mva();
  const double deg = 180.0 / std::numbers::pi;
  std::ostringstream out;
  out << std::setprecision(17);
  out << "function mpc = " << net.name() << "\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << base << ";\n\n";
  out << "%% bus data\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n";
  for (const auto& b : net.buses()) {
    const int type = b.kind == BusKind::slack ? 3 : b.kind == BusKind::generator ? 2 : 1;
    out << '\t' << b.id << '\t' << type << '\t' << b.p_demand * base << '\t' << b.q_demand * base << '\t'
        << b.shunt_g * base << '\t' << b.shunt_b * base << "\t1\t1.0\t0.0\t1.0\t1\t" << b.v_max << '\t' << b.v_min
        << ";\n";
  }
  out << "];\n\n%% generator data\nmpc.gen = [\n";
  for (const auto& g : net.generators()) {
    out << '\t' << g.bus << '\t' << g.p_set * base << "\t0.0\t" << g.q_max * base << '\t' << g.q_min * base << '\t'
        << g.v_set << '\t' << base << "\t1\t" << g.p_max * base << '\t' << g.p_min * base << ";\n";
  }
  out << "];\n\n%% generator cost data\nmpc.gencost = [\n";
  for (const auto& g : net.generators()) {
    out << "\t2\t0.0\t0.0\t3\t" << g.c2 / (base * base) << '\t' << g.c1 / base << '\t' << g.c0 << ";\n";
  }
  out << "];\n\n%% branch data\nmpc.branch = [\n";
  for (const auto& br : net.branches()) {
    const double rate = br.unbounded ? 0.0 : br.rate_a * base;
    out << '\t' << br.from_bus << '\t' << br.to_bus << '\t' << br.r << '\t' << br.x << '\t' << br.b_charging << '\t'
        << rate << '\t' << rate << '\t' << rate << '\t' << br.tap << '\t' << br.shift * deg << "\t1\t"
        << br.ang_min * deg << '\t' << br.ang_max * deg << ";\n";
  }
  out << "];\n";
  return out.str();
}

nlohmann::json to_json(const NetworkCase& net) {
  nlohmann::json doc;
  doc["name"] = net.name();
  doc["base_mva"] = net.base_mva();
  doc["slack_bus"] = net.slack_bus();
  auto& buses = doc["buses"] = nlohmann::json::array();
  for (const auto& b : net.buses()) {
    buses.push_back({{"id", b.id},
                     {"kind", kind_name(b.kind)},
                     {"p_demand", b.p_demand},
                     {"q_demand", b.q_demand},
                     {"shunt_g", b.shunt_g},
                     {"shunt_b", b.shunt_b},
                     {"v_min", b.v_min},
                     {"v_max", b.v_max}});
  }
  auto& branches = doc["branches"] = nlohmann::json::array();
  for (const auto& br : net.branches()) {
    branches.push_back({{"from_bus", br.from_bus},
                        {"to_bus", br.to_bus},
                        {"r", br.r},
                        {"x", br.x},
                        {"b_charging", br.b_charging},
                        {"tap", br.tap},
                        {"shift", br.shift},
                        {"rate_a", br.rate_a},
                        {"ang_min", br.ang_min},
                        {"ang_max", br.ang_max},
                        {"unbounded", br.unbounded},
                        {"source_index", br.source_index}});
  }
  auto& gens = doc["generators"] = nlohmann::json::array();
  for (const auto& g : net.generators()) {
    gens.push_back({{"bus", g.bus},
                    {"p_min", g.p_min},
                    {"p_max", g.p_max},
                    {"q_min", g.q_min},
                    {"q_max", g.q_max},
                    {"c2", g.c2},
                    {"c1", g.c1},
                    {"c0", g.c0}});
  }
  auto& inc = doc["incidence"] = nlohmann::json::array();
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    inc.push_back({{"row", e}, {"from", net.from_position(e)}, {"to", net.to_position(e)}});
  }
  return doc;
}

Eigen::SparseMatrix<double> incidence_matrix(const NetworkCase& net) { return net.incidence(); }

BranchAdmittance branch_admittance(const Branch& branch) {
  if (branch.r == 0.0 && branch.x == 0.0) throw StructureError("zero branch impedance");
  return {1.0 / std::complex<double>(branch.r, branch.x), {0.0, branch.b_charging / 2.0}};
}

std::vector<bool> slack_component(const NetworkCase& net, const std::vector<bool>& in_service) {
  const auto n = net.num_buses();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t e = 0; e < net.num_branches(); ++e) {
    if (!in_service[e]) continue;
    adj[net.from_position(e)].push_back(net.to_position(e));
    adj[net.to_position(e)].push_back(net.from_position(e));
  }
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> queue;
  queue.push(net.slack_position());
  seen[net.slack_position()] = true;
  while (!queue.empty()) {
    auto i = queue.front();
    queue.pop();
    for (auto j : adj[i]) {
      if (!seen[j]) {
        seen[j] = true;
        queue.push(j);
      }
    }
  }
  return seen;
}

bool is_connected(const NetworkCase& net, const std::vector<bool>& in_service) {
  auto seen = slack_component(net, in_service);
  return std::all_of(seen.begin(), seen.end(), [](bool s) { return s; });
}

}  // namespace dcots
