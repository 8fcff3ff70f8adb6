// Command-line front end: parse a grid, optionally upgrade its topology,
// clear the market, and emit machine-readable reports.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gridlmp/casefile.hpp"
#include "gridlmp/dcopf.hpp"
#include "gridlmp/scenarios.hpp"

namespace gl = gridlmp;
namespace fs = std::filesystem;

namespace {

// 0 success/exact, 1 usage or data error, 2 inexact, 3 infeasible.
constexpr int kOk = 0, kError = 1, kInexact = 2, kInfeasible = 3;

struct RunConfig {
  std::string in_path;
  std::string format = "auto";  // auto | matpower | json
  std::string out_dir = ".";
  double tol = 5e-8;
  double rank_tol = 1e-6;
  double margin_tol = 1e-5;
  double loss_factor = 0.035;
  double q_cap_fraction = 0.25;
  std::uint64_t seed = 0;
  int n_scenarios = 100;
  double sweep_step = 0.001;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

gl::Grid load_grid(const RunConfig& cfg, std::vector<std::string>* warnings) {
  std::string fmt = cfg.format;
  if (fmt == "auto")
    fmt = cfg.in_path.size() > 2 &&
                  cfg.in_path.substr(cfg.in_path.size() - 2) == ".m"
              ? "matpower"
              : "json";
  std::string text = slurp(cfg.in_path);
  if (fmt == "matpower") {
    auto rc = gl::parse_matpower(text);
    if (warnings)
      warnings->insert(warnings->end(), rc.warnings.begin(),
                       rc.warnings.end());
    return gl::to_grid(rc);
  }
  return gl::parse_json(text, warnings);
}

int max_threads() {
  if (const char* env = std::getenv("GRIDLMP_THREADS")) {
    int t = std::atoi(env);
    if (t >= 1) return t;
  }
  int hw = int(std::thread::hardware_concurrency());
  return hw >= 1 ? hw : 1;
}

int cmd_validate(const RunConfig& cfg) {
  std::vector<std::string> warnings;
  try {
    gl::Grid g = load_grid(cfg, &warnings);
    for (const auto& w : warnings) std::cout << "warn: " << w << "\n";
    std::cout << "parse: ok\n";
    g.validate();
    std::cout << "invariants: ok\n";
    std::cout << "ac-connected: " << (g.ac_connected() ? "ok" : "FAIL") << "\n";
    if (!g.ac_connected()) return kError;
    gl::build_constraint_system(g);
    std::cout << "constraint-system: ok\n";
    std::cout << "buses: " << g.n_buses() << ", ac: " << g.ac_branches.size()
              << ", dc: " << g.dc_branches.size() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cout << "FAIL: " << e.what() << "\n";
    return kError;
  }
}

int cmd_upgrade(const RunConfig& cfg) {
  gl::Grid g = load_grid(cfg, nullptr);
  auto res = gl::upgrade_to_hybrid(g, cfg.loss_factor, cfg.q_cap_fraction);
  double capacity = 0.0;
  for (const auto& dc : res.grid.dc_branches) capacity += dc.p_max;
  double fraction = g.ac_branches.empty()
                        ? 0.0
                        : double(res.converted.size()) /
                              double(g.ac_branches.size());
  fs::path out = fs::path(cfg.out_dir) / "hybrid.json";
  spit(out, gl::emit_json(res.grid));
  std::cout << "converted: " << res.converted.size() << "\n"
            << "fraction: " << 100.0 * fraction << "%\n"
            << "dc_capacity_mva: " << capacity * g.base_mva << "\n"
            << "written: " << out.string() << "\n";
  return kOk;
}

int cmd_price(const RunConfig& cfg) {
  gl::Grid g = load_grid(cfg, nullptr);
  auto cs = gl::build_constraint_system(g);
  auto sp = gl::build_socr(cs, g);
  auto csol = gl::conic::solve(sp.prog, cfg.tol);
  if (csol.status == gl::conic::Status::Infeasible) {
    std::cout << "status: infeasible\n";
    return kInfeasible;
  }
  if (csol.status != gl::conic::Status::Optimal) {
    std::cout << "status: solver failure\n";
    return kError;
  }
  auto sol = gl::extract_solution(sp, csol, cs, g);
  auto rep = gl::price_report(sol, cs, g, cfg.rank_tol, cfg.margin_tol);
  auto j = gl::report_to_json(rep, g);
  j["schema"] = 1;
  j["objective"] = sol.objective;
  j["lmp_p_pu"] = nlohmann::json::array();  // per-unit duals for debugging
  for (const auto& l : sol.lam) j["lmp_p_pu"].push_back(l[0]);
  fs::path dir(cfg.out_dir);
  spit(dir / "report.json", j.dump(2) + "\n");
  spit(dir / "lmp.csv", gl::report_to_csv(rep, g));
  std::cout << "status: optimal\n"
            << "objective: " << sol.objective << "\n"
            << "exact: " << (rep.exact ? "yes" : "no") << "\n"
            << "kappa_max: " << rep.kappa_max << "\n";
  return rep.exact ? kOk : kInexact;
}

int cmd_dcopf(const RunConfig& cfg) {
  gl::Grid g = load_grid(cfg, nullptr);
  auto sol = gl::solve_dcopf(g, cfg.tol);
  if (sol.status == gl::conic::Status::Infeasible) {
    std::cout << "status: infeasible\n";
    return kInfeasible;
  }
  if (sol.status != gl::conic::Status::Optimal) {
    std::cout << "status: solver failure\n";
    return kError;
  }
  std::string csv = "bus_id,lmp_p\n";
  char buf[64];
  for (int b = 0; b < g.n_buses(); ++b) {
    int id = g.buses[b].orig_id >= 0 ? g.buses[b].orig_id : b;
    std::snprintf(buf, sizeof(buf), "%d,%.10g\n", id,
                  sol.lmp[b] / g.base_mva);
    csv += buf;
  }
  spit(fs::path(cfg.out_dir) / "dcopf_lmp.csv", csv);
  std::cout << "status: optimal\n"
            << "objective: " << sol.objective << "\n";
  return kOk;
}

int cmd_perturb(const RunConfig& cfg) {
  gl::Grid g = load_grid(cfg, nullptr);
  gl::ScenarioSpec spec;
  spec.seed = cfg.seed;
  spec.n_scenarios = cfg.n_scenarios;
  auto batch = gl::run_batch(g, spec, cfg.tol, max_threads());
  spit(fs::path(cfg.out_dir) / "scenarios.csv", gl::batch_to_csv(batch));
  std::cout << "scenarios: " << batch.records.size() << "\n"
            << "exactness_rate: " << batch.exactness_rate << "\n";
  return kOk;
}

int cmd_sweep(const RunConfig& cfg) {
  gl::Grid g = load_grid(cfg, nullptr);
  gl::SweepResult sweep;
  try {
    sweep = gl::loadability_sweep(g, cfg.sweep_step, 80, cfg.tol);
  } catch (const gl::ScenarioError& e) {
    std::cout << "FAIL: " << e.what() << "\n";
    return kInfeasible;
  }
  std::string csv = "scale,lmp_min,lmp_max\n";
  char buf[96];
  for (const auto& pt : sweep.trajectory) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", pt.scale,
                  pt.lmp_min, pt.lmp_max);
    csv += buf;
  }
  spit(fs::path(cfg.out_dir) / "sweep.csv", csv);
  std::cout << "max_scale: " << sweep.max_scale << "\n"
            << "bracket: " << sweep.bracket << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridlmp: certified locational marginal prices from conic "
               "relaxations of optimal power flow"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--in", cfg.in_path, "input grid file")->required();
    sub->add_option("--format", cfg.format, "matpower|json (default: by extension)")
        ->check(CLI::IsMember({"auto", "matpower", "json"}));
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--tol", cfg.tol, "solver tolerance")
        ->check(CLI::PositiveNumber);
  };

  auto* validate = app.add_subcommand("validate", "parse and audit a grid");
  add_common(validate);
  auto* upgrade =
      app.add_subcommand("upgrade", "convert off-tree AC branches to DC");
  add_common(upgrade);
  upgrade->add_option("--loss-factor", cfg.loss_factor, "DC loss factor")
      ->check(CLI::Range(0.0, 0.999));
  upgrade->add_option("--q-cap", cfg.q_cap_fraction,
                      "terminal reactive capability fraction");
  auto* price =
      app.add_subcommand("price", "solve the relaxation and certify LMPs");
  add_common(price);
  price->add_option("--rank-tol", cfg.rank_tol, "rank-ratio tolerance")
      ->check(CLI::PositiveNumber);
  price->add_option("--margin-tol", cfg.margin_tol,
                    "relative subspace-margin tolerance")
      ->check(CLI::PositiveNumber);
  auto* dcopf = app.add_subcommand("dcopf", "linearized OPF baseline");
  add_common(dcopf);
  auto* perturb =
      app.add_subcommand("perturb", "randomized load/cost scenario batch");
  add_common(perturb);
  perturb->add_option("--seed", cfg.seed, "RNG seed");
  perturb->add_option("-n,--scenarios", cfg.n_scenarios, "scenario count")
      ->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep", "uniform loadability bisection");
  add_common(sweep);
  sweep->add_option("--step", cfg.sweep_step, "bracket width")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (validate->parsed()) return cmd_validate(cfg);
    if (upgrade->parsed()) return cmd_upgrade(cfg);
    if (price->parsed()) return cmd_price(cfg);
    if (dcopf->parsed()) return cmd_dcopf(cfg);
    if (perturb->parsed()) return cmd_perturb(cfg);
    if (sweep->parsed()) return cmd_sweep(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
