// Full semidefinite relaxation on tiny grids as a cross-check for the
// partial-Gram relaxation, plus the strictly feasible point construction.
#pragma once

#include "gridlmp/socr.hpp"

namespace gridlmp {

struct SdrError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SdrSolution {
  conic::Status status = conic::Status::NumericalFailure;
  MatrixXcd V;  // Hermitian psd Gram matrix
  VectorXd p;
  VectorXd gen_p, gen_q, load_p, load_q;
  double objective = 0.0;
  VectorXd eigenvalues;  // spectrum of V, ascending
};

struct SdrProblem {
  conic::Program prog;
  std::vector<std::vector<int>> x_var;  // Re V, upper triangle i <= j
  std::vector<std::vector<int>> y_var;  // Im V, strict upper triangle i < j
  MarketPart market;
};

// Full-matrix relaxation: the Hermitian psd constraint V >= 0 is imposed on
// the real embedding [[X, -Y], [Y, X]] of V = X + iY, which is psd exactly
// when V is. The market rows match the partial-Gram relaxation one-to-one.
inline SdrProblem build_sdr(const ConstraintSystem& cs, const Grid& grid,
                            int cap = 12) {
  using conic::AffExpr;
  const int n = cs.n_bus;
  if (n > cap)
    throw SdrError("TooLarge: " + std::to_string(n) + " buses exceeds cap " +
                   std::to_string(cap));
  SdrProblem sp;
  conic::Program& prog = sp.prog;
  sp.x_var.assign(n, std::vector<int>(n, -1));
  sp.y_var.assign(n, std::vector<int>(n, -1));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) sp.x_var[i][j] = prog.new_var();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) sp.y_var[i][j] = prog.new_var();

  auto trace_expr = [&](const SpHermitian& C) {
    AffExpr e;
    for (const auto& [i, j, v] : C.entries) {
      if (i == j) {
        e.add(sp.x_var[i][i], v.real());
      } else {
        e.add(sp.x_var[i][j], 2.0 * v.real());
        e.add(sp.y_var[i][j], 2.0 * v.imag());
      }
    }
    return e;
  };
  sp.market = detail::assemble_market(&prog, cs, grid, trace_expr);

  // Lower triangle of the 2n x 2n embedding, row-major.
  auto entry = [&](int r, int c) {  // r >= c
    bool rb = r >= n, cb = c >= n;
    int i = rb ? r - n : r, j = cb ? c - n : c;
    if (rb == cb) {  // X blocks
      return AffExpr::var(sp.x_var[std::min(i, j)][std::max(i, j)]);
    }
    // Lower-left block holds +Y: entry (n+i, j) = Y_ij, antisymmetric.
    if (i == j) return AffExpr(0.0);
    double s = i < j ? 1.0 : -1.0;
    return AffExpr::var(sp.y_var[std::min(i, j)][std::max(i, j)], s);
  };
  std::vector<AffExpr> lower;
  for (int r = 0; r < 2 * n; ++r)
    for (int c = 0; c <= r; ++c) lower.push_back(entry(r, c));
  prog.add_psd(2 * n, lower);
  return sp;
}

inline SdrSolution extract_sdr(const SdrProblem& sp,
                               const conic::Solution& csol,
                               const ConstraintSystem& cs) {
  SdrSolution sol;
  sol.status = csol.status;
  if (csol.status != conic::Status::Optimal) return sol;
  const int n = cs.n_bus;
  sol.V = MatrixXcd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double re = csol.x[sp.x_var[i][j]];
      double im = i == j ? 0.0 : csol.x[sp.y_var[i][j]];
      sol.V(i, j) = Complex(re, im);
      sol.V(j, i) = Complex(re, -im);
    }
  sol.p.resize(cs.num_dc_vars());
  for (int i = 0; i < cs.num_dc_vars(); ++i) sol.p[i] = csol.x[sp.market.p[i]];
  auto gather = [&](const std::vector<SocrLayout::Device>& devs, VectorXd* vp,
                    VectorXd* vq) {
    vp->resize(devs.size());
    vq->resize(devs.size());
    for (size_t i = 0; i < devs.size(); ++i) {
      (*vp)[i] = csol.x[devs[i].vp];
      (*vq)[i] = csol.x[devs[i].vq];
    }
  };
  gather(sp.market.gens, &sol.gen_p, &sol.gen_q);
  gather(sp.market.loads, &sol.load_p, &sol.load_q);
  sol.objective = csol.objective + sp.market.obj_offset;
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(sol.V);
  sol.eigenvalues = es.eigenvalues();
  return sol;
}

inline SdrSolution solve_sdr(const Grid& grid, double tol = 5e-8,
                             int cap = 12) {
  ConstraintSystem cs = build_constraint_system(grid);
  SdrProblem sp = build_sdr(cs, grid, cap);
  conic::Solution csol = conic::solve(sp.prog, tol);
  return extract_sdr(sp, csol, cs);
}

// Strictly feasible candidate from the rank-1 + eps*I construction around a
// flat voltage profile, with the dispatch absorbing the injections.
struct StrictPoint {
  MatrixXcd V;
  VectorXd p;       // DC variables (zero)
  VectorXd gen_p, gen_q;
  std::vector<double> load_p, load_q;
  bool strict = false;  // all inequalities strict and V positive definite
};

inline StrictPoint strict_point(const ConstraintSystem& cs, const Grid& grid,
                                double eps) {
  const int n = cs.n_bus;
  VectorXcd v(n);
  for (int i = 0; i < n; ++i)
    v[i] = 0.5 * (grid.buses[i].v_min + grid.buses[i].v_max);
  StrictPoint out;
  out.V = v * v.adjoint() + eps * MatrixXcd::Identity(n, n);
  out.p = VectorXd::Zero(cs.num_dc_vars());

  auto trace_of = [&](const SpHermitian& C) { return C.trace_product(out.V); };
  const double slack = 1e-9;
  bool strict = eps > 0;
  for (const auto& row : cs.rows) {
    double lhs = trace_of(row.C);  // DC variables are zero
    if (lhs > row.b - slack) {
      if (lhs > row.b + slack)
        throw SdrError("NoStrictPoint: flat profile violates a system row");
      strict = false;
    }
  }

  // Loads at their fixed values / box midpoints; generation absorbs the
  // resulting net injection per bus, spread evenly over the local units.
  std::vector<double> need_p(n, 0.0), need_q(n, 0.0);
  for (int b = 0; b < n; ++b) {
    need_p[b] = trace_of(cs.P[b]);
    need_q[b] = trace_of(cs.Q[b]);
  }
  for (const auto& load : grid.loads) {
    double dp = 0.5 * (load.p_min + load.p_max);
    double dq = 0.5 * (load.q_min + load.q_max);
    out.load_p.push_back(dp);
    out.load_q.push_back(dq);
    need_p[load.bus] += dp;
    need_q[load.bus] += dq;
    if (load.p_min == load.p_max || load.q_min == load.q_max) {
      // Singleton loads sit on their (degenerate) boundary by definition;
      // strictness concerns only the inequality constraints, so no change.
    }
  }
  out.gen_p.resize(grid.generators.size());
  out.gen_q.resize(grid.generators.size());
  for (int b = 0; b < n; ++b) {
    std::vector<int> local;
    for (size_t gidx = 0; gidx < grid.generators.size(); ++gidx)
      if (grid.generators[gidx].bus == b) local.push_back(int(gidx));
    if (local.empty()) {
      if (std::abs(need_p[b]) > 1e-7 || std::abs(need_q[b]) > 1e-7)
        throw SdrError("NoStrictPoint: no generation at an unbalanced bus");
      continue;
    }
    // Common interpolation parameter across the local units.
    double plo = 0, phi = 0, qlo = 0, qhi = 0;
    for (int gidx : local) {
      if (!grid.generators[gidx].is_box())
        throw SdrError("NoStrictPoint: polygon units not supported");
      plo += grid.generators[gidx].p_min;
      phi += grid.generators[gidx].p_max;
      qlo += grid.generators[gidx].q_min;
      qhi += grid.generators[gidx].q_max;
    }
    auto split = [&](double need, double lo, double hi, bool* ok) {
      if (need < lo - slack || need > hi + slack) {
        throw SdrError("NoStrictPoint: required dispatch outside capability");
      }
      *ok = need > lo + slack && need < hi - slack;
      return hi > lo ? (need - lo) / (hi - lo) : 0.0;
    };
    bool okp = false, okq = false;
    double tp = split(need_p[b], plo, phi, &okp);
    double tq = split(need_q[b], qlo, qhi, &okq);
    if (!okp || !okq) strict = false;
    for (int gidx : local) {
      const auto& gen = grid.generators[gidx];
      out.gen_p[gidx] = gen.p_min + tp * (gen.p_max - gen.p_min);
      out.gen_q[gidx] = gen.q_min + tq * (gen.q_max - gen.q_min);
    }
  }
  out.strict = strict;
  return out;
}

}  // namespace gridlmp
