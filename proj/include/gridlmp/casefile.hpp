// MATPOWER-style case parsing, conversion to the internal per-unit grid
// model, and the native versioned JSON interchange format.
#pragma once

#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gridlmp/grid.hpp"

namespace gridlmp {

struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RawCase {
  double base_mva = 100.0;
  std::vector<std::vector<double>> bus_table;
  std::vector<std::vector<double>> gen_table;
  std::vector<std::vector<double>> branch_table;
  std::vector<std::vector<double>> gencost_table;
  std::vector<std::string> warnings;
};

// MATPOWER column positions (cf. caseformat documentation).
namespace mpc {
enum BusCol { BUS_I = 0, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN };
enum GenCol { GEN_BUS = 0, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN };
enum BrCol { F_BUS = 0, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX };
}  // namespace mpc

namespace detail {

inline std::string strip_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.find('%');
    if (pos != std::string::npos) line.erase(pos);
    out += line;
    out += '\n';
  }
  return out;
}

// Parse `name = [ rows ];` matrix assignment. Rows separated by ';' or
// newlines, numbers in decimal or scientific notation.
inline std::optional<std::vector<std::vector<double>>> parse_matrix(
    const std::string& text, const std::string& name) {
  // Find "mpc.<name>" or bare "<name>" followed by '=' and '['.
  size_t pos = 0;
  while (true) {
    pos = text.find(name, pos);
    if (pos == std::string::npos) return std::nullopt;
    bool left_ok = pos == 0 || !(std::isalnum(text[pos - 1]) || text[pos - 1] == '_');
    size_t after = pos + name.size();
    bool right_ok = after < text.size() && !(std::isalnum(text[after]) || text[after] == '_');
    if (left_ok && right_ok) {
      size_t eq = text.find_first_not_of(" \t", after);
      if (eq != std::string::npos && text[eq] == '=') break;
    }
    pos = after;
  }
  size_t open = text.find('[', pos);
  if (open == std::string::npos)
    throw CaseError("MalformedRow: no '[' after " + name);
  size_t close = text.find(']', open);
  if (close == std::string::npos)
    throw CaseError("MalformedRow: no ']' closing " + name);
  std::string body = text.substr(open + 1, close - open - 1);
  for (auto& c : body)
    if (c == ';' || c == ',') c = '\n';
  std::vector<std::vector<double>> rows;
  std::istringstream in(body);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        row.push_back(v);
      } catch (const std::exception&) {
        throw CaseError("MalformedRow in " + name + " line " +
                        std::to_string(lineno) + ": '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

inline double parse_scalar(const std::string& text, const std::string& name) {
  size_t pos = text.find(name);
  if (pos == std::string::npos) throw CaseError("MissingTable: " + name);
  size_t eq = text.find('=', pos);
  if (eq == std::string::npos) throw CaseError("MalformedRow: " + name);
  return std::stod(text.substr(eq + 1));
}

}  // namespace detail

inline RawCase parse_matpower(const std::string& text) {
  std::string clean = detail::strip_comments(text);
  RawCase rc;
  rc.base_mva = detail::parse_scalar(clean, "baseMVA");
  if (rc.base_mva <= 0) throw CaseError("baseMVA must be positive");
  auto need = [&](const char* name) {
    auto m = detail::parse_matrix(clean, name);
    if (!m) throw CaseError(std::string("MissingTable: ") + name);
    return *m;
  };
  rc.gencost_table = need("gencost");  // parse before "gen" (substring clash)
  rc.gen_table = need("gen");
  rc.bus_table = need("bus");
  rc.branch_table = need("branch");
  if (rc.gencost_table.size() != rc.gen_table.size() &&
      rc.gencost_table.size() != 2 * rc.gen_table.size())
    throw CaseError("gencost rows do not align with gen rows");
  if (rc.gencost_table.size() == 2 * rc.gen_table.size()) {
    // Second half carries reactive cost rows; ignored with a warning.
    rc.warnings.push_back("reactive gencost rows ignored");
    rc.gencost_table.resize(rc.gen_table.size());
  }
  std::set<int> bus_ids;
  for (const auto& row : rc.bus_table) {
    if (row.size() < 13) throw CaseError("MalformedRow: bus row too short");
    bus_ids.insert(int(row[mpc::BUS_I]));
  }
  for (const auto& row : rc.gen_table) {
    if (row.size() < 10) throw CaseError("MalformedRow: gen row too short");
    if (!bus_ids.count(int(row[mpc::GEN_BUS])))
      throw CaseError("gen references unknown bus " +
                      std::to_string(int(row[mpc::GEN_BUS])));
  }
  for (const auto& row : rc.branch_table) {
    if (row.size() < 13) throw CaseError("MalformedRow: branch row too short");
    if (!bus_ids.count(int(row[mpc::F_BUS])) || !bus_ids.count(int(row[mpc::T_BUS])))
      throw CaseError("branch references unknown bus");
  }
  for (const auto& row : rc.gencost_table) {
    if (row.size() < 4) throw CaseError("MalformedRow: gencost row too short");
    int model = int(row[0]);
    if (model != 1 && model != 2)
      throw CaseError("UnsupportedCostModel: " + std::to_string(model));
    if (model == 2 && int(row[3]) > 3)
      throw CaseError("UnsupportedCostModel: polynomial degree > 2");
  }
  return rc;
}

// Convert a RawCase into the per-unit internal model. Out-of-service rows are
// dropped, bus ids remapped to contiguous 0..N-1 (original order preserved),
// and cost coefficients rescaled so the objective stays in $/h with p.u.
// dispatch variables.
inline Grid to_grid(const RawCase& rc) {
  Grid g;
  g.base_mva = rc.base_mva;
  std::map<int, int> bus_index;
  for (const auto& row : rc.bus_table) {
    int id = int(row[mpc::BUS_I]);
    if (bus_index.count(id)) throw CaseError("duplicate bus id");
    bus_index[id] = g.n_buses();
    Bus b;
    b.orig_id = id;
    b.v_max = row[mpc::VMAX];
    b.v_min = row[mpc::VMIN];
    b.shunt_g = row[mpc::GS] / rc.base_mva;
    b.shunt_b = row[mpc::BS] / rc.base_mva;
    g.buses.push_back(b);
    if (int(row[mpc::BUS_TYPE]) == 3) g.reference_bus = g.n_buses() - 1;
    double pd = row[mpc::PD] / rc.base_mva;
    double qd = row[mpc::QD] / rc.base_mva;
    if (pd != 0.0 || qd != 0.0)
      g.loads.push_back(LoadSpec::fixed_load(g.n_buses() - 1, pd, qd));
  }
  for (size_t i = 0; i < rc.branch_table.size(); ++i) {
    const auto& row = rc.branch_table[i];
    if (int(row[mpc::BR_STATUS]) == 0) continue;
    AcBranch b;
    b.orig_id = int(i) + 1;
    b.from = bus_index.at(int(row[mpc::F_BUS]));
    b.to = bus_index.at(int(row[mpc::T_BUS]));
    b.series_r = row[mpc::BR_R];
    b.series_x = row[mpc::BR_X];
    if (b.series_r < 0) throw CaseError("NegativeResistance on branch " +
                                        std::to_string(b.orig_id));
    b.shunt_b = row[mpc::BR_B];
    b.tap = row[mpc::TAP] == 0.0 ? 1.0 : row[mpc::TAP];
    b.shift = row[mpc::SHIFT] * M_PI / 180.0;
    // RATE_A is an MVA rating; translate to a current bound at nominal
    // voltage (1 p.u.): |I| <= S / V. Zero rating means unlimited.
    double rate = row[mpc::RATE_A];
    double imax = rate > 0 ? rate / rc.base_mva : 1e4;
    b.i_max_from = b.i_max_to = imax;
    double angmin = row[mpc::ANGMIN] * M_PI / 180.0;
    double angmax = row[mpc::ANGMAX] * M_PI / 180.0;
    const double cap = M_PI_2 - 1e-3;
    b.ang_lo = std::max(angmin, -cap);
    b.ang_hi = std::min(angmax, cap);
    if (b.ang_lo > 0) b.ang_lo = -cap;  // MATPOWER uses 0,0 for "unbounded"
    if (b.ang_hi < 0) b.ang_hi = cap;
    if (b.ang_lo == 0 && b.ang_hi == 0) {
      b.ang_lo = -cap;
      b.ang_hi = cap;
    }
    g.ac_branches.push_back(b);
  }
  for (size_t i = 0; i < rc.gen_table.size(); ++i) {
    const auto& row = rc.gen_table[i];
    if (int(row[mpc::GEN_STATUS]) == 0) continue;
    GenSpec gen;
    gen.orig_id = int(i) + 1;
    gen.bus = bus_index.at(int(row[mpc::GEN_BUS]));
    gen.p_min = row[mpc::PMIN] / rc.base_mva;
    gen.p_max = row[mpc::PMAX] / rc.base_mva;
    gen.q_min = row[mpc::QMIN] / rc.base_mva;
    gen.q_max = row[mpc::QMAX] / rc.base_mva;
    const auto& cost = rc.gencost_table[i];
    int model = int(cost[0]);
    int ncoef = int(cost[3]);
    if (model == 2) {
      // Polynomial c_{n-1} x^{n-1} + ... + c_0 with x in MW; convert to p.u.
      double c2 = 0, c1 = 0, c0 = 0;
      if (ncoef >= 1) c0 = cost[4 + ncoef - 1];
      if (ncoef >= 2) c1 = cost[4 + ncoef - 2] * rc.base_mva;
      if (ncoef >= 3) c2 = cost[4 + ncoef - 3] * rc.base_mva * rc.base_mva;
      gen.cost = CostFn::quadratic(c2, c1, c0);
    } else {
      // Piecewise linear: pairs (x_MW, y_$/h).
      std::vector<double> xs, ys;
      for (int k = 0; k < ncoef; ++k) {
        xs.push_back(cost[4 + 2 * k] / rc.base_mva);
        ys.push_back(cost[4 + 2 * k + 1]);
      }
      gen.cost = CostFn::pwl(std::move(xs), std::move(ys));
    }
    g.generators.push_back(gen);
  }
  g.validate();
  if (!g.ac_connected()) throw CaseError("IslandedBus: AC graph disconnected");
  return g;
}

// --- native JSON schema (docs/grid-schema.md), version 1 -------------------

namespace detail {

inline nlohmann::json cost_to_json(const CostFn& f) {
  nlohmann::json j;
  if (f.kind == CostFn::Kind::Quadratic)
    j = {{"kind", "quadratic"}, {"c2", f.c2}, {"c1", f.c1}, {"c0", f.c0}};
  else
    j = {{"kind", "pwl"}, {"x", f.xs}, {"y", f.ys}};
  return j;
}

inline CostFn cost_from_json(const nlohmann::json& j) {
  if (j.at("kind") == "quadratic")
    return CostFn::quadratic(j.at("c2"), j.at("c1"), j.at("c0"));
  return CostFn::pwl(j.at("x").get<std::vector<double>>(),
                     j.at("y").get<std::vector<double>>());
}

}  // namespace detail

inline std::string emit_json(const Grid& g) {
  nlohmann::json j;
  j["schema"] = 1;
  j["base_mva"] = g.base_mva;
  j["reference_bus"] = g.reference_bus;
  j["buses"] = nlohmann::json::array();
  for (const auto& b : g.buses)
    j["buses"].push_back({{"v_min", b.v_min},
                          {"v_max", b.v_max},
                          {"shunt_g", b.shunt_g},
                          {"shunt_b", b.shunt_b},
                          {"orig_id", b.orig_id}});
  j["ac_branches"] = nlohmann::json::array();
  for (const auto& b : g.ac_branches)
    j["ac_branches"].push_back({{"from", b.from},
                                {"to", b.to},
                                {"r", b.series_r},
                                {"x", b.series_x},
                                {"b", b.shunt_b},
                                {"tap", b.tap},
                                {"shift", b.shift},
                                {"i_max_from", b.i_max_from},
                                {"i_max_to", b.i_max_to},
                                {"drop_lo", b.drop_lo},
                                {"drop_hi", b.drop_hi},
                                {"ang_lo", b.ang_lo},
                                {"ang_hi", b.ang_hi},
                                {"orig_id", b.orig_id}});
  j["dc_branches"] = nlohmann::json::array();
  for (const auto& d : g.dc_branches)
    j["dc_branches"].push_back({{"from", d.from},
                                {"to", d.to},
                                {"p_min", d.p_min},
                                {"p_max", d.p_max},
                                {"loss_factor", d.loss_factor},
                                {"q_capability", d.q_capability},
                                {"orig_id", d.orig_id}});
  j["generators"] = nlohmann::json::array();
  for (const auto& gen : g.generators) {
    nlohmann::json gj = {{"bus", gen.bus},
                         {"p_min", gen.p_min},
                         {"p_max", gen.p_max},
                         {"q_min", gen.q_min},
                         {"q_max", gen.q_max},
                         {"cost", detail::cost_to_json(gen.cost)},
                         {"orig_id", gen.orig_id}};
    if (!gen.polygon.empty()) {
      auto poly = nlohmann::json::array();
      for (auto [p, q] : gen.polygon) poly.push_back({p, q});
      gj["polygon"] = poly;
    }
    j["generators"].push_back(gj);
  }
  j["loads"] = nlohmann::json::array();
  for (const auto& l : g.loads) {
    nlohmann::json lj = {{"bus", l.bus},
                         {"p_min", l.p_min},
                         {"p_max", l.p_max},
                         {"q_min", l.q_min},
                         {"q_max", l.q_max}};
    if (!l.benefit.zero) lj["benefit_neg"] = detail::cost_to_json(l.benefit.neg);
    j["loads"].push_back(lj);
  }
  return j.dump(2);
}

inline Grid parse_json(const std::string& text,
                       std::vector<std::string>* warnings = nullptr) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("schema") || j["schema"].get<int>() != 1)
    throw CaseError("SchemaVersionMismatch");
  static const std::set<std::string> known = {
      "schema", "base_mva", "reference_bus", "buses",
      "ac_branches", "dc_branches", "generators", "loads"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()) && warnings)
      warnings->push_back("ignored unknown field: " + it.key());
  Grid g;
  g.base_mva = j.at("base_mva");
  g.reference_bus = j.at("reference_bus");
  for (const auto& bj : j.at("buses")) {
    Bus b;
    b.v_min = bj.at("v_min");
    b.v_max = bj.at("v_max");
    b.shunt_g = bj.value("shunt_g", 0.0);
    b.shunt_b = bj.value("shunt_b", 0.0);
    b.orig_id = bj.value("orig_id", -1);
    g.buses.push_back(b);
  }
  for (const auto& bj : j.at("ac_branches")) {
    AcBranch b;
    b.from = bj.at("from");
    b.to = bj.at("to");
    b.series_r = bj.at("r");
    b.series_x = bj.at("x");
    b.shunt_b = bj.value("b", 0.0);
    b.tap = bj.value("tap", 1.0);
    b.shift = bj.value("shift", 0.0);
    b.i_max_from = bj.value("i_max_from", 1e4);
    b.i_max_to = bj.value("i_max_to", 1e4);
    b.drop_lo = bj.value("drop_lo", -0.5);
    b.drop_hi = bj.value("drop_hi", 0.5);
    b.ang_lo = bj.value("ang_lo", -1.2);
    b.ang_hi = bj.value("ang_hi", 1.2);
    b.orig_id = bj.value("orig_id", -1);
    g.ac_branches.push_back(b);
  }
  for (const auto& dj : j.at("dc_branches")) {
    DcBranch d;
    d.from = dj.at("from");
    d.to = dj.at("to");
    d.p_min = dj.at("p_min");
    d.p_max = dj.at("p_max");
    d.loss_factor = dj.value("loss_factor", 0.0);
    d.q_capability = dj.value("q_capability", 0.0);
    d.orig_id = dj.value("orig_id", -1);
    g.dc_branches.push_back(d);
  }
  for (const auto& gj : j.at("generators")) {
    GenSpec gen;
    gen.bus = gj.at("bus");
    gen.p_min = gj.at("p_min");
    gen.p_max = gj.at("p_max");
    gen.q_min = gj.at("q_min");
    gen.q_max = gj.at("q_max");
    gen.cost = detail::cost_from_json(gj.at("cost"));
    gen.orig_id = gj.value("orig_id", -1);
    if (gj.contains("polygon"))
      for (const auto& v : gj["polygon"])
        gen.polygon.emplace_back(v[0].get<double>(), v[1].get<double>());
    g.generators.push_back(gen);
  }
  for (const auto& lj : j.at("loads")) {
    LoadSpec l;
    l.bus = lj.at("bus");
    l.p_min = lj.at("p_min");
    l.p_max = lj.at("p_max");
    l.q_min = lj.at("q_min");
    l.q_max = lj.at("q_max");
    if (lj.contains("benefit_neg")) {
      l.benefit.zero = false;
      l.benefit.neg = detail::cost_from_json(lj["benefit_neg"]);
    }
    g.loads.push_back(l);
  }
  g.validate();
  return g;
}

}  // namespace gridlmp
