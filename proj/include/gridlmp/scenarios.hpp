// Perturbation ensembles (randomized load/cost scaling) and uniform
// loadability sweeps over a base grid.
#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <thread>

#include "gridlmp/pricing.hpp"

namespace gridlmp {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScenarioSpec {
  std::uint64_t seed = 0;
  int n_scenarios = 1;
  std::pair<double, double> load_scale_range{0.25, 1.25};
  std::pair<double, double> cost_scale_range{0.5, 2.0};
};

namespace detail {

// SplitMix64: tiny, well-mixed, and stable across platforms. Each scenario
// gets its own substream keyed by (seed, index), so scenarios can be
// generated out of order and in parallel.
struct SplitMix64 {
  std::uint64_t s;
  std::uint64_t next() {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * double(next() >> 11) * 0x1.0p-53;
  }
};

inline SplitMix64 substream(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 key{seed};
  key.s = key.next() ^ (index * 0xd1342543de82ef95ULL + 1);
  return key;
}

}  // namespace detail

struct ScenarioFactors {
  std::vector<double> load_scale;  // per load, in grid order
  std::vector<double> cost_scale;  // per generator, in grid order
};

inline ScenarioFactors scenario_factors(const Grid& grid,
                                        const ScenarioSpec& spec, int index) {
  if (index < 0 || index >= spec.n_scenarios)
    throw ScenarioError("scenario index out of range");
  auto rng = detail::substream(spec.seed, std::uint64_t(index));
  ScenarioFactors f;
  for (size_t i = 0; i < grid.loads.size(); ++i)
    f.load_scale.push_back(rng.uniform(spec.load_scale_range.first,
                                       spec.load_scale_range.second));
  for (size_t i = 0; i < grid.generators.size(); ++i)
    f.cost_scale.push_back(rng.uniform(spec.cost_scale_range.first,
                                       spec.cost_scale_range.second));
  return f;
}

inline Grid apply_factors(const Grid& base, const ScenarioFactors& f) {
  Grid g = base;
  for (size_t i = 0; i < g.loads.size(); ++i) {
    auto& l = g.loads[i];
    l.p_min *= f.load_scale[i];
    l.p_max *= f.load_scale[i];
    l.q_min *= f.load_scale[i];
    l.q_max *= f.load_scale[i];
  }
  for (size_t i = 0; i < g.generators.size(); ++i)
    g.generators[i].cost = g.generators[i].cost.scaled(f.cost_scale[i]);
  return g;
}

inline Grid perturb(const Grid& base, const ScenarioSpec& spec, int index) {
  return apply_factors(base, scenario_factors(base, spec, index));
}

struct ScenarioRecord {
  int index = 0;
  conic::Status status = conic::Status::NumericalFailure;
  double objective = 0.0;
  double kappa_mean = 0.0, kappa_max = 0.0;
  bool exact = false;
  std::string error;  // nonempty when the solve or pricing step failed
};

struct BatchResult {
  std::uint64_t seed = 0;
  std::vector<ScenarioRecord> records;  // ordered by scenario index
  double exactness_rate = 0.0;          // over optimal solves
};

inline ScenarioRecord run_scenario(const Grid& base, const ScenarioSpec& spec,
                                   int index, double tol) {
  ScenarioRecord rec;
  rec.index = index;
  try {
    Grid g = perturb(base, spec, index);
    auto sol = solve_socr(g, tol);
    rec.status = sol.status;
    if (sol.status != conic::Status::Optimal) return rec;
    rec.objective = sol.objective;
    auto cs = build_constraint_system(g);
    auto rep = price_report(sol, cs, g);
    rec.kappa_mean = rep.kappa_mean;
    rec.kappa_max = rep.kappa_max;
    rec.exact = rep.exact;
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

inline BatchResult run_batch(const Grid& base, const ScenarioSpec& spec,
                             double tol = 5e-8, int threads = 1) {
  BatchResult out;
  out.seed = spec.seed;
  out.records.resize(spec.n_scenarios);
  if (threads <= 1) {
    for (int i = 0; i < spec.n_scenarios; ++i)
      out.records[i] = run_scenario(base, spec, i, tol);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int i = next++; i < spec.n_scenarios; i = next++)
          out.records[i] = run_scenario(base, spec, i, tol);
      });
    for (auto& th : pool) th.join();
  }
  int solved = 0, exact = 0;
  for (const auto& r : out.records)
    if (r.status == conic::Status::Optimal && r.error.empty()) {
      ++solved;
      exact += r.exact;
    }
  out.exactness_rate = solved ? double(exact) / double(solved) : 0.0;
  return out;
}

// scenario,kappa,kappa_max,exact
inline std::string batch_to_csv(const BatchResult& batch) {
  std::string out = "scenario,kappa,kappa_max,exact\n";
  char buf[128];
  for (const auto& r : batch.records) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%d\n", r.index,
                  r.kappa_mean, r.kappa_max, int(r.exact));
    out += buf;
  }
  return out;
}

struct SweepPoint {
  double scale = 0.0;
  double lmp_min = 0.0, lmp_max = 0.0;  // $/MWh over buses
};

struct SweepResult {
  double max_scale = 0.0;    // largest scale proven feasible
  double bracket = 0.0;      // max_scale + bracket is infeasible
  std::vector<SweepPoint> trajectory;
};

inline Grid scale_loads(const Grid& base, double scale) {
  Grid g = base;
  for (auto& l : g.loads) {
    l.p_min *= scale;
    l.p_max *= scale;
    l.q_min *= scale;
    l.q_max *= scale;
  }
  return g;
}

// Bisection on a uniform load multiplier until the feasible/infeasible
// boundary is bracketed to `step`.
inline SweepResult loadability_sweep(const Grid& base, double step = 0.001,
                                     int max_iter = 60, double tol = 5e-8) {
  if (step <= 0) throw ScenarioError("sweep step must be positive");
  auto probe = [&](double scale) -> std::optional<SweepPoint> {
    auto sol = solve_socr(scale_loads(base, scale), tol);
    if (sol.status != conic::Status::Optimal) return std::nullopt;
    SweepPoint pt;
    pt.scale = scale;
    pt.lmp_min = 1e300;
    pt.lmp_max = -1e300;
    for (const auto& l : sol.lam) {
      pt.lmp_min = std::min(pt.lmp_min, l[0] / base.base_mva);
      pt.lmp_max = std::max(pt.lmp_max, l[0] / base.base_mva);
    }
    return pt;
  };
  SweepResult out;
  auto base_pt = probe(1.0);
  if (!base_pt) throw ScenarioError("BaseInfeasible: unit load scale");
  out.trajectory.push_back(*base_pt);
  double lo = 1.0, hi = 2.0;
  // Grow until infeasible (or give up and report the last feasible bound).
  int it = 0;
  while (it++ < max_iter) {
    auto pt = probe(hi);
    if (!pt) break;
    out.trajectory.push_back(*pt);
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > step && it++ < max_iter) {
    double mid = 0.5 * (lo + hi);
    auto pt = probe(mid);
    if (pt) {
      out.trajectory.push_back(*pt);
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.max_scale = lo;
  out.bracket = hi - lo;
  std::sort(out.trajectory.begin(), out.trajectory.end(),
            [](const SweepPoint& a, const SweepPoint& b) {
              return a.scale < b.scale;
            });
  return out;
}

}  // namespace gridlmp
