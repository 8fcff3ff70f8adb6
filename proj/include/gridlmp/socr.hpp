// Second-order cone relaxation of the welfare-maximizing OPF on the partial
// Gram matrix, plus the dual read-back into nodal prices and the per-branch
// 2x2 dual blocks, with surplus/profit evaluation for the dual objective.
#pragma once

#include <array>
#include <map>

#include "gridlmp/conic.hpp"
#include "gridlmp/ipm.hpp"
#include "gridlmp/matrices.hpp"

namespace gridlmp {

struct SocrError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Variable/row bookkeeping of the assembled cone program. The partial Gram
// matrix is stored as one real scalar per bus (diagonal) and one complex
// entry per connected AC bus pair (2E - N uplift over the voltage vector).
struct SocrLayout {
  std::vector<int> w_diag;  // [V]_{nn}
  // Unordered pair (a < b) -> (Re, Im) variable ids of [V]_{a,b}.
  std::map<std::pair<int, int>, std::pair<int, int>> w_pair;
  std::vector<int> p;  // DC device variables (4 per DC branch)
  struct Device {
    int vp = -1, vq = -1;
  };
  std::vector<Device> gens, loads;
  std::vector<int> bal_p, bal_q;  // equality row per bus (active/reactive)
  std::vector<int> ineq_row;      // cone row per stacked inequality
  std::vector<int> psd_row;       // SOC block offset per AC branch
  double obj_offset = 0.0;        // constants dropped from the conic objective
};

struct SocrProblem {
  conic::Program prog;
  SocrLayout layout;
};

struct SocrSolution {
  conic::Status status = conic::Status::NumericalFailure;
  VectorXd w_diag;             // |v_n|^2
  std::vector<Complex> w_off;  // [V]_{from(k), to(k)} per AC branch
  VectorXd p;                  // DC device variables
  VectorXd gen_p, gen_q, load_p, load_q;
  std::vector<std::array<double, 2>> lam;  // nodal duals, $/p.u.-h
  VectorXd mu;                             // stacked-inequality duals >= 0
  std::vector<Eigen::Matrix2cd> lam_branch;  // 2x2 psd dual per AC branch
  double objective = 0.0;                    // optimal welfare, $/h
  double psi_matrix_residual = 0.0;  // dual identity on the Gram pattern
  double psi_vec_residual = 0.0;     // dual identity over the DC variables
  double comp_slack = 0.0;           // max_k trace(Lambda_k Xi_k)
  conic::KktResiduals kkt;
};

namespace detail {

// Registers "minimize f(x)" inside a maximization program: epigraph variable
// for quadratic/PWL curves, direct linear terms otherwise. Returns the
// constant objective offset (in the maximize convention).
inline double minimize_convex(conic::Program* prog, const CostFn& f, int x) {
  using conic::AffExpr;
  if (f.kind == CostFn::Kind::Quadratic && f.c2 == 0.0) {
    prog->set_objective_term(x, -f.c1);
    return -f.c0;
  }
  int t = prog->new_var();
  prog->set_objective_term(t, -1.0);
  if (f.kind == CostFn::Kind::Quadratic) {
    // t - c1 x - c0 >= c2 x^2 as a rotated cone with v = 1.
    AffExpr u = AffExpr::var(t);
    u.add(x, -f.c1);
    u.constant = -f.c0;
    prog->add_rsoc(u, AffExpr(1.0), {AffExpr::var(x, std::sqrt(f.c2))});
  } else {
    // One supporting hyperplane per PWL segment: t >= y_i + s_i (x - x_i).
    for (size_t i = 0; i + 1 < f.xs.size(); ++i) {
      double s = (f.ys[i + 1] - f.ys[i]) / (f.xs[i + 1] - f.xs[i]);
      AffExpr e = AffExpr::var(x, s);
      e.add(t, -1.0);
      prog->add_ineq(e, s * f.xs[i] - f.ys[i]);
    }
  }
  return 0.0;
}

// Half-plane rows of a convex (P, Q) polygon; orientation-agnostic.
inline void add_polygon(conic::Program* prog, int vp, int vq,
                        const std::vector<std::pair<double, double>>& poly) {
  if (poly.size() < 3) throw SocrError("capability polygon needs >= 3 vertices");
  double cx = 0, cy = 0;
  for (auto [x, y] : poly) {
    cx += x;
    cy += y;
  }
  cx /= double(poly.size());
  cy /= double(poly.size());
  for (size_t i = 0; i < poly.size(); ++i) {
    auto [x1, y1] = poly[i];
    auto [x2, y2] = poly[(i + 1) % poly.size()];
    double nx = y2 - y1, ny = x1 - x2;  // edge normal
    if (nx * (cx - x1) + ny * (cy - y1) > 0) {  // point it away from centroid
      nx = -nx;
      ny = -ny;
    }
    conic::AffExpr e = conic::AffExpr::var(vp, nx);
    e.add(vq, ny);
    prog->add_ineq(e, nx * x1 + ny * y1);
  }
}

// Range constraint lo <= var <= hi, collapsing to an equality when tight.
inline void add_range(conic::Program* prog, int var, double lo, double hi) {
  using conic::AffExpr;
  if (lo == hi) {
    prog->add_eq(AffExpr::var(var), lo);
  } else {
    prog->add_ineq(AffExpr::var(var, -1.0), -lo);
    prog->add_ineq(AffExpr::var(var), hi);
  }
}

}  // namespace detail

// Market-side program parts shared by the partial-Gram and full-matrix
// relaxations: DC variables, dispatch sets, welfare objective, power balance
// and the stacked inequalities. Parameterized over the Gram trace expression.
struct MarketPart {
  std::vector<int> p;
  std::vector<SocrLayout::Device> gens, loads;
  std::vector<int> bal_p, bal_q, ineq_row;
  double obj_offset = 0.0;
};

namespace detail {

template <class TraceExpr>
MarketPart assemble_market(conic::Program* prog, const ConstraintSystem& cs,
                           const Grid& grid, TraceExpr trace_expr) {
  using conic::AffExpr;
  MarketPart mp;
  mp.p = prog->new_vars(cs.num_dc_vars());

  for (const auto& gen : grid.generators) {
    SocrLayout::Device dev{prog->new_var(), prog->new_var()};
    mp.gens.push_back(dev);
    if (gen.is_box()) {
      add_range(prog, dev.vp, gen.p_min, gen.p_max);
      add_range(prog, dev.vq, gen.q_min, gen.q_max);
    } else {
      add_polygon(prog, dev.vp, dev.vq, gen.polygon);
    }
    mp.obj_offset += minimize_convex(prog, gen.cost, dev.vp);
  }
  for (const auto& load : grid.loads) {
    SocrLayout::Device dev{prog->new_var(), prog->new_var()};
    mp.loads.push_back(dev);
    add_range(prog, dev.vp, load.p_min, load.p_max);
    add_range(prog, dev.vq, load.q_min, load.q_max);
    if (!load.benefit.zero)
      mp.obj_offset += minimize_convex(prog, load.benefit.neg, dev.vp);
  }

  // Power balance: injection - generation + load = 0 per bus and part.
  mp.bal_p.resize(cs.n_bus);
  mp.bal_q.resize(cs.n_bus);
  for (int nidx = 0; nidx < cs.n_bus; ++nidx) {
    AffExpr ep = trace_expr(cs.P[nidx]);
    AffExpr eq = trace_expr(cs.Q[nidx]);
    for (auto [var, coef] : cs.h_p[nidx]) ep.add(mp.p[var], coef);
    for (auto [var, coef] : cs.h_q[nidx]) eq.add(mp.p[var], coef);
    for (size_t gidx = 0; gidx < grid.generators.size(); ++gidx)
      if (grid.generators[gidx].bus == nidx) {
        ep.add(mp.gens[gidx].vp, -1.0);
        eq.add(mp.gens[gidx].vq, -1.0);
      }
    for (size_t lidx = 0; lidx < grid.loads.size(); ++lidx)
      if (grid.loads[lidx].bus == nidx) {
        ep.add(mp.loads[lidx].vp, 1.0);
        eq.add(mp.loads[lidx].vq, 1.0);
      }
    mp.bal_p[nidx] = prog->add_eq(ep, 0.0);
    mp.bal_q[nidx] = prog->add_eq(eq, 0.0);
  }

  // Stacked inequalities in canonical order.
  for (const auto& row : cs.rows) {
    AffExpr e = trace_expr(row.C);
    for (auto [var, coef] : row.c_dc) e.add(mp.p[var], coef);
    mp.ineq_row.push_back(prog->add_ineq(e, row.b));
  }
  return mp;
}

}  // namespace detail

inline SocrProblem build_socr(const ConstraintSystem& cs, const Grid& grid) {
  using conic::AffExpr;
  SocrProblem sp;
  conic::Program& prog = sp.prog;
  SocrLayout& lay = sp.layout;
  const int n = cs.n_bus;

  lay.w_diag = prog.new_vars(n);
  for (const auto& br : grid.ac_branches) {
    auto key = std::minmax(br.from, br.to);
    if (!lay.w_pair.count({key.first, key.second}))
      lay.w_pair[{key.first, key.second}] = {prog.new_var(), prog.new_var()};
  }

  // trace(C W): diagonal entries hit [V]_{nn}; an off-diagonal entry C_ij
  // contributes 2 Re(C_ij conj(W_ij)) = 2 Re(C_ij) Re(W_ij) + 2 Im(C_ij) Im(W_ij).
  auto trace_expr = [&](const SpHermitian& C) {
    AffExpr e;
    for (const auto& [i, j, v] : C.entries) {
      if (i == j) {
        e.add(lay.w_diag[i], v.real());
      } else {
        auto [re, im] = lay.w_pair.at({i, j});
        e.add(re, 2.0 * v.real());
        e.add(im, 2.0 * v.imag());
      }
    }
    return e;
  };

  MarketPart mp = detail::assemble_market(&prog, cs, grid, trace_expr);
  lay.p = std::move(mp.p);
  lay.gens = std::move(mp.gens);
  lay.loads = std::move(mp.loads);
  lay.bal_p = std::move(mp.bal_p);
  lay.bal_q = std::move(mp.bal_q);
  lay.ineq_row = std::move(mp.ineq_row);
  lay.obj_offset = mp.obj_offset;

  // One psd 2x2 principal submatrix per AC branch as a rotated cone:
  // W_ii W_jj >= |W_ij|^2 with W_ii, W_jj >= 0.
  for (const auto& br : grid.ac_branches) {
    int i = br.from, j = br.to;
    auto [re, im] = lay.w_pair.at(std::minmax(i, j));
    double s = i < j ? 1.0 : -1.0;  // Im flips under conjugation
    lay.psd_row.push_back(prog.add_rsoc(
        AffExpr::var(lay.w_diag[i]), AffExpr::var(lay.w_diag[j]),
        {AffExpr::var(re), AffExpr::var(im, s)}));
  }
  return sp;
}

inline SocrSolution extract_solution(const SocrProblem& sp,
                                     const conic::Solution& csol,
                                     const ConstraintSystem& cs,
                                     const Grid& grid) {
  SocrSolution sol;
  sol.status = csol.status;
  if (csol.status != conic::Status::Optimal) return sol;
  const SocrLayout& lay = sp.layout;
  const int n = cs.n_bus;

  sol.w_diag.resize(n);
  for (int i = 0; i < n; ++i) sol.w_diag[i] = csol.x[lay.w_diag[i]];
  for (const auto& br : grid.ac_branches) {
    auto [re, im] = lay.w_pair.at(std::minmax(br.from, br.to));
    double s = br.from < br.to ? 1.0 : -1.0;
    sol.w_off.emplace_back(csol.x[re], s * csol.x[im]);
  }
  sol.p.resize(cs.num_dc_vars());
  for (int i = 0; i < cs.num_dc_vars(); ++i) sol.p[i] = csol.x[lay.p[i]];
  auto gather = [&](const std::vector<SocrLayout::Device>& devs, VectorXd* vp,
                    VectorXd* vq) {
    vp->resize(devs.size());
    vq->resize(devs.size());
    for (size_t i = 0; i < devs.size(); ++i) {
      (*vp)[i] = csol.x[devs[i].vp];
      (*vq)[i] = csol.x[devs[i].vq];
    }
  };
  gather(lay.gens, &sol.gen_p, &sol.gen_q);
  gather(lay.loads, &sol.load_p, &sol.load_q);

  // Nodal duals from the balance equalities; with the rows written as
  // injection - g + d = 0, the conic multiplier is the price directly.
  sol.lam.resize(n);
  for (int i = 0; i < n; ++i)
    sol.lam[i] = {csol.y[lay.bal_p[i]], csol.y[lay.bal_q[i]]};
  sol.mu.resize(lay.ineq_row.size());
  for (size_t m = 0; m < lay.ineq_row.size(); ++m)
    sol.mu[m] = std::max(0.0, csol.z[lay.ineq_row[m]]);

  // Per-branch 2x2 dual from the rotated-cone dual (z0, z1, z2, z3):
  // Lambda_k = [[z0+z1, z2+i z3], [z2-i z3, z0-z1]], psd by z in SOC*.
  for (int k = 0; k < cs.n_ac; ++k) {
    int off = lay.psd_row[k];
    double z0 = csol.z[off], z1 = csol.z[off + 1];
    double z2 = csol.z[off + 2], z3 = csol.z[off + 3];
    Eigen::Matrix2cd L;
    L << Complex(z0 + z1, 0.0), Complex(z2, z3), Complex(z2, -z3),
        Complex(z0 - z1, 0.0);
    sol.lam_branch.push_back(L);
  }

  sol.objective = csol.objective + lay.obj_offset;
  sol.kkt = conic::kkt_residuals(sp.prog, csol);

  // Dual identity on the Gram pattern: Psi(Lambda, mu) must coincide with the
  // scatter of the branch duals onto their 2x2 principal submatrices.
  std::map<std::pair<int, int>, Complex> lhs, rhs;
  SpHermitian psi = assemble_psi(cs, sol.lam, sol.mu);
  for (const auto& [i, j, v] : psi.entries) lhs[{i, j}] += v;
  for (int k = 0; k < cs.n_ac; ++k) {
    int i = grid.ac_branches[k].from, j = grid.ac_branches[k].to;
    const auto& L = sol.lam_branch[k];
    rhs[{i, i}] += L(0, 0);
    rhs[{j, j}] += L(1, 1);
    if (i < j)
      rhs[{i, j}] += L(0, 1);
    else
      rhs[{j, i}] += L(1, 0);
  }
  for (const auto& [key, v] : rhs) lhs[key];  // unify patterns
  for (const auto& [key, v] : lhs) {
    Complex r = rhs.count(key) ? rhs.at(key) : Complex(0.0, 0.0);
    sol.psi_matrix_residual =
        std::max(sol.psi_matrix_residual, std::abs(v - r));
  }
  if (sol.psi_matrix_residual > 1e-5)
    throw SocrError("DualReconstructionMismatch: residual " +
                    std::to_string(sol.psi_matrix_residual));

  VectorXd psiv = assemble_psi_vec(cs, sol.lam, sol.mu);
  sol.psi_vec_residual = psiv.size() ? psiv.cwiseAbs().maxCoeff() : 0.0;

  for (int k = 0; k < cs.n_ac; ++k) {
    int i = grid.ac_branches[k].from, j = grid.ac_branches[k].to;
    const auto& L = sol.lam_branch[k];
    double t = L(0, 0).real() * sol.w_diag[i] + L(1, 1).real() * sol.w_diag[j] +
               2.0 * std::real(L(0, 1) * std::conj(sol.w_off[k]));
    sol.comp_slack = std::max(sol.comp_slack, std::abs(t));
  }
  return sol;
}

namespace detail {

// max over [lo, hi] of a*x - f(x) for convex f: the objective is concave, so
// the maximum sits at a curvature/breakpoint candidate or a box endpoint.
inline double support_value(double a, const CostFn& f, double lo, double hi) {
  std::vector<double> cand{lo, hi};
  if (f.kind == CostFn::Kind::Quadratic) {
    if (f.c2 > 0) cand.push_back((a - f.c1) / (2.0 * f.c2));
  } else {
    cand.insert(cand.end(), f.xs.begin(), f.xs.end());
  }
  double best = -1e300;
  for (double x : cand) {
    x = std::min(hi, std::max(lo, x));
    best = std::max(best, a * x - f.eval(x));
  }
  return best;
}

// Feasible Q interval of a convex polygon at abscissa p (empty -> nullopt).
inline std::optional<std::pair<double, double>> polygon_q_range(
    const std::vector<std::pair<double, double>>& poly, double p) {
  double qlo = 1e300, qhi = -1e300;
  const double eps = 1e-12;
  for (size_t i = 0; i < poly.size(); ++i) {
    auto [x1, y1] = poly[i];
    auto [x2, y2] = poly[(i + 1) % poly.size()];
    if (std::abs(x2 - x1) < eps) {
      if (std::abs(p - x1) < 1e-9) {
        qlo = std::min({qlo, y1, y2});
        qhi = std::max({qhi, y1, y2});
      }
      continue;
    }
    double t = (p - x1) / (x2 - x1);
    if (t < -1e-9 || t > 1.0 + 1e-9) continue;
    double q = y1 + t * (y2 - y1);
    qlo = std::min(qlo, q);
    qhi = std::max(qhi, q);
  }
  if (qhi < qlo) return std::nullopt;
  return std::make_pair(qlo, qhi);
}

}  // namespace detail

// Producer profit function: max over the capability set of Lambda' g - C(g_P).
inline double producer_profit(const std::array<double, 2>& lam,
                              const GenSpec& gen) {
  if (gen.is_box()) {
    double q = std::max(lam[1] * gen.q_min, lam[1] * gen.q_max);
    return q + detail::support_value(lam[0], gen.cost, gen.p_min, gen.p_max);
  }
  // Candidate abscissae: vertices, cost breakpoints, per-edge stationary
  // points of the partially maximized concave objective.
  std::vector<double> cand;
  double plo = 1e300, phi = -1e300;
  for (auto [x, y] : gen.polygon) {
    cand.push_back(x);
    plo = std::min(plo, x);
    phi = std::max(phi, x);
  }
  if (gen.cost.kind == CostFn::Kind::PiecewiseLinear) {
    cand.insert(cand.end(), gen.cost.xs.begin(), gen.cost.xs.end());
  } else if (gen.cost.c2 > 0) {
    cand.push_back((lam[0] - gen.cost.c1) / (2.0 * gen.cost.c2));
    for (size_t i = 0; i < gen.polygon.size(); ++i) {
      auto [x1, y1] = gen.polygon[i];
      auto [x2, y2] = gen.polygon[(i + 1) % gen.polygon.size()];
      if (std::abs(x2 - x1) < 1e-12) continue;
      double slope = (y2 - y1) / (x2 - x1);  // q rides this edge
      cand.push_back((lam[0] + lam[1] * slope - gen.cost.c1) /
                     (2.0 * gen.cost.c2));
    }
  }
  double best = -1e300;
  for (double p : cand) {
    p = std::min(phi, std::max(plo, p));
    auto qr = detail::polygon_q_range(gen.polygon, p);
    if (!qr) continue;
    double q = std::max(lam[1] * qr->first, lam[1] * qr->second);
    best = std::max(best, lam[0] * p + q - gen.cost.eval(p));
  }
  return best;
}

// Consumer surplus function: max over the load set of B(d) - Lambda' d.
inline double consumer_surplus(const std::array<double, 2>& lam,
                               const LoadSpec& load) {
  double q = std::max(-lam[1] * load.q_min, -lam[1] * load.q_max);
  if (load.benefit.zero) {
    double p = std::max(-lam[0] * load.p_min, -lam[0] * load.p_max);
    return q + p;
  }
  return q +
         detail::support_value(-lam[0], load.benefit.neg, load.p_min,
                               load.p_max);
}

// Independent dual objective: mu'b + sum of surplus and profit functions.
inline double dual_objective(const SocrSolution& sol,
                             const ConstraintSystem& cs, const Grid& grid) {
  double acc = 0.0;
  for (size_t m = 0; m < cs.rows.size(); ++m) acc += sol.mu[m] * cs.rows[m].b;
  for (const auto& gen : grid.generators)
    acc += producer_profit(sol.lam[gen.bus], gen);
  for (const auto& load : grid.loads)
    acc += consumer_surplus(sol.lam[load.bus], load);
  return acc;
}

struct StrongDualityViolation : SocrError {
  using SocrError::SocrError;
};

inline void check_strong_duality(const SocrSolution& sol,
                                 const ConstraintSystem& cs, const Grid& grid,
                                 double tol = 1e-5) {
  double d = dual_objective(sol, cs, grid);
  if (std::abs(d - sol.objective) > tol * (1.0 + std::abs(sol.objective)))
    throw StrongDualityViolation(
        "StrongDualityViolation: primal " + std::to_string(sol.objective) +
        " vs dual " + std::to_string(d));
}

inline SocrSolution solve_socr(const Grid& grid, double tol = 5e-8) {
  ConstraintSystem cs = build_constraint_system(grid);
  SocrProblem sp = build_socr(cs, grid);
  conic::Solution csol = conic::solve(sp.prog, tol);
  return extract_solution(sp, csol, cs, grid);
}

}  // namespace gridlmp
