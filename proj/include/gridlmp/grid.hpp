// Hybrid AC/DC grid domain model: buses, AC/DC branches, generators, loads,
// cost/benefit curves, preprocessing passes and the MST-based hybrid upgrade.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridlmp {

using Complex = std::complex<double>;

struct GridError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Convex piecewise-linear or convex quadratic cost in active power.
// PWL is stored as breakpoints (x, y) with nondecreasing slopes.
struct CostFn {
  enum class Kind { Quadratic, PiecewiseLinear };
  Kind kind = Kind::Quadratic;
  double c2 = 0.0, c1 = 0.0, c0 = 0.0;     // c2*x^2 + c1*x + c0
  std::vector<double> xs, ys;              // PWL breakpoints

  static CostFn quadratic(double c2, double c1, double c0 = 0.0) {
    CostFn f;
    f.kind = Kind::Quadratic;
    f.c2 = c2;
    f.c1 = c1;
    f.c0 = c0;
    if (c2 < 0) throw GridError("CostFn: negative quadratic coefficient");
    return f;
  }
  static CostFn linear(double slope, double offset = 0.0) {
    return quadratic(0.0, slope, offset);
  }
  static CostFn pwl(std::vector<double> xs, std::vector<double> ys) {
    CostFn f;
    f.kind = Kind::PiecewiseLinear;
    if (xs.size() != ys.size() || xs.size() < 2)
      throw GridError("CostFn: malformed PWL data");
    double prev_slope = -1e300;
    for (size_t i = 0; i + 1 < xs.size(); ++i) {
      if (xs[i + 1] <= xs[i]) throw GridError("CostFn: PWL x not increasing");
      double s = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
      if (s < prev_slope - 1e-9) throw GridError("CostFn: PWL not convex");
      prev_slope = std::max(prev_slope, s);
    }
    f.xs = std::move(xs);
    f.ys = std::move(ys);
    return f;
  }

  int num_segments() const {
    return kind == Kind::PiecewiseLinear ? int(xs.size()) - 1 : 0;
  }

  double eval(double x) const {
    if (kind == Kind::Quadratic) return c2 * x * x + c1 * x + c0;
    // Evaluate as max of segment extensions (valid for convex PWL).
    double v = -1e300;
    for (size_t i = 0; i + 1 < xs.size(); ++i) {
      double s = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
      v = std::max(v, ys[i] + s * (x - xs[i]));
    }
    return v;
  }

  // Subdifferential [lo, hi] at x.
  std::pair<double, double> subdiff(double x) const {
    if (kind == Kind::Quadratic) {
      double g = 2.0 * c2 * x + c1;
      return {g, g};
    }
    double lo = -1e300, hi = 1e300;
    const double eps = 1e-9;
    for (size_t i = 0; i + 1 < xs.size(); ++i) {
      double s = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
      if (x > xs[i] - eps && x < xs[i + 1] + eps) {
        if (x > xs[i] + eps) lo = std::max(lo, s);  // not first point of seg
        if (x < xs[i + 1] - eps) hi = std::min(hi, s);
      }
      if (x >= xs[i + 1] - eps && i + 2 == xs.size()) lo = std::max(lo, s);
    }
    if (lo == -1e300) lo = hi;  // at left endpoint
    if (hi == 1e300) hi = lo;
    return {lo, hi};
  }

  CostFn scaled(double alpha) const {
    CostFn f = *this;
    f.c2 *= alpha;
    f.c1 *= alpha;
    f.c0 *= alpha;
    for (auto& y : f.ys) y *= alpha;
    return f;
  }
};

// Concave benefit function of active load (constant 0 for fixed loads).
// Stored as a CostFn of the negated values: B(x) = -neg.eval(x).
struct BenefitFn {
  CostFn neg = CostFn::linear(0.0);  // convex negation of the concave benefit
  bool zero = true;

  static BenefitFn none() { return BenefitFn{}; }
  static BenefitFn linear(double slope) {
    BenefitFn b;
    b.zero = false;
    b.neg = CostFn::linear(-slope);
    return b;
  }
  // Concave PWL with nonincreasing slopes.
  static BenefitFn pwl(std::vector<double> xs, std::vector<double> ys) {
    BenefitFn b;
    b.zero = false;
    for (auto& y : ys) y = -y;
    b.neg = CostFn::pwl(std::move(xs), std::move(ys));
    return b;
  }
  double eval(double x) const { return zero ? 0.0 : -neg.eval(x); }
  BenefitFn scaled(double alpha) const {
    BenefitFn b = *this;
    b.neg = neg.scaled(alpha);
    return b;
  }
};

struct AcBranch {
  int from = 0, to = 0;       // bus indices, 0-based
  double series_r = 0.0;      // p.u.
  double series_x = 0.0;      // p.u.
  double shunt_b = 0.0;       // total line charging, p.u.
  double tap = 1.0;           // ratio (1 = none)
  double shift = 0.0;         // radians
  double i_max_from = 1e4;    // p.u. current bound at source
  double i_max_to = 1e4;      // p.u. current bound at destination
  double drop_lo = -0.5;      // relative voltage drop range [lo, hi]
  double drop_hi = 0.5;
  double ang_lo = -1.2;       // radians, inside (-pi/2, pi/2)
  double ang_hi = 1.2;
  int orig_id = -1;           // original 1-based row index in the case file

  Complex series_admittance() const {
    Complex zs(series_r, series_x);
    if (std::abs(zs) == 0.0) throw GridError("zero-impedance AC branch");
    return 1.0 / zs;
  }
};

struct DcBranch {
  int from = 0, to = 0;
  double p_min = 0.0, p_max = 0.0;  // p.u. flow bounds
  double loss_factor = 0.0;         // in [0, 1)
  double q_capability = 0.0;        // p.u. reactive bound at each terminal
  int orig_id = -1;                 // AC branch id it was upgraded from, if any
};

// P-Q capability region: box or convex polygon of (P, Q) vertices.
struct GenSpec {
  int bus = 0;
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
  std::vector<std::pair<double, double>> polygon;  // empty => box
  CostFn cost = CostFn::linear(0.0);
  int orig_id = -1;

  bool is_box() const { return polygon.empty(); }
};

struct LoadSpec {
  int bus = 0;
  double p_min = 0.0, p_max = 0.0;  // singleton when p_min == p_max
  double q_min = 0.0, q_max = 0.0;
  BenefitFn benefit = BenefitFn::none();

  bool fixed() const { return p_min == p_max && q_min == q_max; }
  static LoadSpec fixed_load(int bus, double p, double q) {
    LoadSpec l;
    l.bus = bus;
    l.p_min = l.p_max = p;
    l.q_min = l.q_max = q;
    return l;
  }
};

struct Bus {
  double v_min = 0.9, v_max = 1.1;  // p.u., v_min strictly positive
  double shunt_g = 0.0, shunt_b = 0.0;
  int orig_id = -1;  // original bus number in the case file
};

struct Grid {
  double base_mva = 100.0;
  int reference_bus = 0;
  std::vector<Bus> buses;
  std::vector<AcBranch> ac_branches;
  std::vector<DcBranch> dc_branches;
  std::vector<GenSpec> generators;
  std::vector<LoadSpec> loads;

  int n_buses() const { return int(buses.size()); }

  void validate() const {
    for (const auto& b : ac_branches) {
      if (b.from < 0 || b.from >= n_buses() || b.to < 0 || b.to >= n_buses())
        throw GridError("AC branch references unknown bus");
      if (b.from == b.to) throw GridError("AC branch is a self-loop");
      if (b.series_r <= 0)
        throw GridError("AC branch with nonpositive series resistance");
      if (!(b.ang_lo <= 0 && 0 <= b.ang_hi) || b.ang_lo <= -M_PI_2 ||
          b.ang_hi >= M_PI_2)
        throw GridError("angle range not inside (-pi/2, pi/2) around 0");
      if (b.drop_lo > b.drop_hi || b.drop_lo < -1.0)
        throw GridError("invalid voltage drop range");
    }
    for (const auto& d : dc_branches) {
      if (d.from < 0 || d.from >= n_buses() || d.to < 0 || d.to >= n_buses())
        throw GridError("DC branch references unknown bus");
      if (d.p_min > d.p_max || d.loss_factor < 0 || d.loss_factor >= 1 ||
          d.q_capability < 0)
        throw GridError("invalid DC branch parameters");
    }
    for (const auto& b : buses)
      if (!(0 < b.v_min && b.v_min <= b.v_max))
        throw GridError("voltage bounds must satisfy 0 < Vmin <= Vmax");
    for (const auto& g : generators)
      if (g.bus < 0 || g.bus >= n_buses())
        throw GridError("generator references unknown bus");
    for (const auto& l : loads)
      if (l.bus < 0 || l.bus >= n_buses())
        throw GridError("load references unknown bus");
    if (reference_bus < 0 || reference_bus >= n_buses())
      throw GridError("invalid reference bus");
  }

  bool ac_connected() const {
    if (buses.empty()) return false;
    std::vector<int> seen(buses.size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (const auto& b : ac_branches) {
        int v = -1;
        if (b.from == u) v = b.to;
        if (b.to == u) v = b.from;
        if (v >= 0 && !seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](int s) { return s != 0; });
  }
};

namespace detail {
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};
}  // namespace detail

// Combine parallel AC branches per unordered bus pair: tap ratios are raised
// to the group maximum, series admittances add in parallel, shunts and current
// limits add, drop/angle ranges intersect.
inline Grid merge_parallel_branches(const Grid& grid) {
  Grid out = grid;
  std::vector<AcBranch> merged;
  std::vector<int> used(grid.ac_branches.size(), 0);
  for (size_t i = 0; i < grid.ac_branches.size(); ++i) {
    if (used[i]) continue;
    std::vector<size_t> group{i};
    int a = std::min(grid.ac_branches[i].from, grid.ac_branches[i].to);
    int b = std::max(grid.ac_branches[i].from, grid.ac_branches[i].to);
    for (size_t j = i + 1; j < grid.ac_branches.size(); ++j) {
      const auto& br = grid.ac_branches[j];
      if (std::min(br.from, br.to) == a && std::max(br.from, br.to) == b) {
        group.push_back(j);
        used[j] = 1;
      }
    }
    if (group.size() == 1) {
      merged.push_back(grid.ac_branches[i]);
      continue;
    }
    // Orient every member like the first one; anti-parallel members are
    // flipped (swapping endpoint roles, negating shift and mirroring ranges).
    AcBranch base = grid.ac_branches[group[0]];
    double tap_max = 0.0;
    for (size_t j : group) {
      AcBranch br = grid.ac_branches[j];
      if (br.from != base.from) {  // anti-parallel
        std::swap(br.from, br.to);
        std::swap(br.i_max_from, br.i_max_to);
        br.shift = -br.shift;
        double lo = br.ang_lo, hi = br.ang_hi;
        br.ang_lo = -hi;
        br.ang_hi = -lo;
        // Drop range does not mirror cleanly; intersect conservatively.
      }
      if (std::abs(br.shift - base.shift) > 1e-12)
        throw GridError("IncompatibleShifts: parallel branches with "
                        "different phase-shift angles");
      tap_max = std::max(tap_max, br.tap);
    }
    Complex y_sum = 0.0;
    double shunt = 0.0, imax_f = 0.0, imax_t = 0.0;
    double drop_lo = -1e300, drop_hi = 1e300, ang_lo = -1e300, ang_hi = 1e300;
    for (size_t j : group) {
      AcBranch br = grid.ac_branches[j];
      if (br.from != base.from) {
        std::swap(br.from, br.to);
        std::swap(br.i_max_from, br.i_max_to);
        br.shift = -br.shift;
        double lo = br.ang_lo, hi = br.ang_hi;
        br.ang_lo = -hi;
        br.ang_hi = -lo;
      }
      br.tap = tap_max;  // equalize before combining
      y_sum += br.series_admittance();
      shunt += br.shunt_b;
      imax_f += br.i_max_from;
      imax_t += br.i_max_to;
      drop_lo = std::max(drop_lo, br.drop_lo);
      drop_hi = std::min(drop_hi, br.drop_hi);
      ang_lo = std::max(ang_lo, br.ang_lo);
      ang_hi = std::min(ang_hi, br.ang_hi);
    }
    Complex z = 1.0 / y_sum;
    AcBranch eq = base;
    eq.series_r = z.real();
    eq.series_x = z.imag();
    eq.shunt_b = shunt;
    eq.tap = tap_max;
    eq.i_max_from = imax_f;
    eq.i_max_to = imax_t;
    eq.drop_lo = drop_lo;
    eq.drop_hi = drop_hi;
    eq.ang_lo = ang_lo;
    eq.ang_hi = ang_hi;
    merged.push_back(eq);
  }
  out.ac_branches = std::move(merged);
  return out;
}

struct MinResistanceResult {
  Grid grid;
  int modified = 0;
};

inline MinResistanceResult enforce_min_resistance(const Grid& grid,
                                                  double r_min = 1e-5) {
  if (r_min <= 0) throw GridError("r_min must be positive");
  MinResistanceResult res{grid, 0};
  for (auto& b : res.grid.ac_branches)
    if (b.series_r < r_min) {
      b.series_r = r_min;
      ++res.modified;
    }
  return res;
}

// Scale current limits of the listed branches (ids are 0-based positions).
inline Grid scale_branch_rating(const Grid& grid,
                                const std::vector<int>& branch_ids,
                                double factor) {
  if (factor <= 0) throw GridError("rating factor must be positive");
  Grid out = grid;
  for (int id : branch_ids) {
    if (id < 0 || id >= int(out.ac_branches.size()))
      throw GridError("UnknownBranch: " + std::to_string(id));
    out.ac_branches[id].i_max_from *= factor;
    out.ac_branches[id].i_max_to *= factor;
  }
  return out;
}

struct UpgradeResult {
  Grid grid;
  std::vector<int> converted;  // 0-based AC branch positions that became DC
};

// Keep a minimum spanning tree of the AC subgraph under weight = series_r
// (Kruskal, ties broken by lowest branch index) and convert every excluded
// AC branch into a bidirectional DC branch. Capacity proxy: Vmax * i_max_from.
inline UpgradeResult upgrade_to_hybrid(const Grid& grid,
                                       double loss_factor = 0.035,
                                       double q_cap_fraction = 0.25) {
  if (!grid.ac_connected()) throw GridError("Disconnected AC subgraph");
  const int n = grid.n_buses();
  std::vector<int> order(grid.ac_branches.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return grid.ac_branches[a].series_r < grid.ac_branches[b].series_r;
  });
  detail::UnionFind uf(n);
  std::vector<char> in_tree(grid.ac_branches.size(), 0);
  for (int id : order)
    if (uf.unite(grid.ac_branches[id].from, grid.ac_branches[id].to))
      in_tree[id] = 1;

  UpgradeResult res;
  res.grid = grid;
  res.grid.ac_branches.clear();
  for (size_t id = 0; id < grid.ac_branches.size(); ++id) {
    const AcBranch& b = grid.ac_branches[id];
    if (in_tree[id]) {
      res.grid.ac_branches.push_back(b);
    } else {
      DcBranch d;
      d.from = b.from;
      d.to = b.to;
      double v_nom = grid.buses[b.from].v_max;
      double cap = v_nom * b.i_max_from;
      d.p_max = cap;
      d.p_min = -cap;
      d.loss_factor = loss_factor;
      d.q_capability = q_cap_fraction * cap;
      d.orig_id = b.orig_id;
      res.grid.dc_branches.push_back(d);
      res.converted.push_back(int(id));
    }
  }
  return res;
}

}  // namespace gridlmp
