// Hermitian constraint matrices of the network model, the stacked inequality
// system, and the dual assembly maps.
#pragma once

#include <Eigen/Sparse>

#include <array>
#include <functional>
#include <map>
#include <tuple>

#include "gridlmp/grid.hpp"

namespace gridlmp {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Sparse Hermitian matrix stored as entries with i <= j; the (j, i) mirror is
// implied by conjugation and diagonal entries are kept real.
struct SpHermitian {
  std::vector<std::tuple<int, int, Complex>> entries;

  void add(int i, int j, Complex v) {
    if (i > j) {
      std::swap(i, j);
      v = std::conj(v);
    }
    if (i == j) v = Complex(v.real(), 0.0);
    if (v != Complex(0.0, 0.0)) entries.emplace_back(i, j, v);
  }

  // v^H A v (real for Hermitian A).
  double quad_form(const VectorXcd& v) const {
    double acc = 0.0;
    for (const auto& [i, j, a] : entries) {
      if (i == j)
        acc += a.real() * std::norm(v[i]);
      else
        acc += 2.0 * std::real(std::conj(v[i]) * a * v[j]);
    }
    return acc;
  }

  // trace(A W) where W is Hermitian and available entrywise; lookup(i, j)
  // must return W_ij for i < j pairs on the pattern.
  double trace_product(const VectorXd& w_diag,
                       const std::function<Complex(int, int)>& lookup) const {
    double acc = 0.0;
    for (const auto& [i, j, a] : entries) {
      if (i == j)
        acc += a.real() * w_diag[i];
      else
        acc += 2.0 * std::real(a * std::conj(lookup(i, j)));
    }
    return acc;
  }

  // trace(A W) for a dense Hermitian W.
  double trace_product(const MatrixXcd& W) const {
    double acc = 0.0;
    for (const auto& [i, j, a] : entries) {
      if (i == j)
        acc += a.real() * W(i, i).real();
      else
        acc += 2.0 * std::real(a * std::conj(W(i, j)));
    }
    return acc;
  }

  MatrixXcd dense(int n) const {
    MatrixXcd M = MatrixXcd::Zero(n, n);
    for (const auto& [i, j, a] : entries) {
      M(i, j) += a;
      if (i != j) M(j, i) += std::conj(a);
    }
    return M;
  }

  SpHermitian scaled(double alpha) const {
    SpHermitian r = *this;
    for (auto& [i, j, a] : r.entries) a *= alpha;
    return r;
  }
};

enum class RowKind {
  VoltageLo,
  VoltageHi,
  CurrentOut,
  CurrentIn,
  DropLo,
  DropHi,
  AngleCenter,
  AngleLo,
  AngleHi,
  DcNetLo,
  DcNetHi,
  // Extended device rows (appended after the canonical block).
  DcFwdLo,
  DcFwdHi,
  DcRevLo,
  DcRevHi,
  DcQFromLo,
  DcQFromHi,
  DcQToLo,
  DcQToHi,
};

// One stacked inequality: trace(C V) + c_dc' p  <=  b.
struct ConstraintRow {
  SpHermitian C;
  std::vector<std::pair<int, double>> c_dc;  // indices into the DC variables
  double b = 0.0;
  RowKind kind;
  int element = -1;  // bus / AC-branch / DC-branch index
};

// Variable layout of a DC branch: forward flow, reverse flow, converter
// reactive support at each terminal. All four are free in the conic model;
// their bounds live in the device rows.
struct DcVarLayout {
  int p_fwd, p_rev, q_from, q_to;
};

struct ConstraintSystem {
  int n_bus = 0, n_ac = 0, n_dc = 0;
  Eigen::SparseMatrix<Complex> Y;

  std::vector<SpHermitian> P, Q;  // per bus, injection forms
  std::vector<SpHermitian> iout, iin, mlo, mhi, a_center, a_lo, a_hi;

  std::vector<DcVarLayout> dc_vars;          // per DC branch
  std::vector<std::pair<int, double>> dc_lo, dc_hi;  // per-variable bounds
  // Per-bus linear maps over the DC variables (active / reactive balance).
  std::vector<std::vector<std::pair<int, double>>> h_p, h_q;

  std::vector<ConstraintRow> rows;

  int num_dc_vars() const { return 4 * n_dc; }
  int canonical_row_count() const { return 2 * n_bus + 7 * n_ac + 2 * n_dc; }
};

inline Eigen::SparseMatrix<Complex> build_admittance(const Grid& grid) {
  const int n = grid.n_buses();
  std::vector<Eigen::Triplet<Complex>> trip;
  for (const auto& br : grid.ac_branches) {
    if (br.series_r == 0.0 && br.series_x == 0.0)
      throw GridError("ZeroImpedanceBranch: branch " +
                      std::to_string(br.orig_id));
    Complex y = br.series_admittance();
    Complex ysh(0.0, br.shunt_b / 2.0);
    Complex tap = std::polar(br.tap, br.shift);
    trip.emplace_back(br.from, br.from, (y + ysh) / (br.tap * br.tap));
    trip.emplace_back(br.to, br.to, y + ysh);
    trip.emplace_back(br.from, br.to, -y / std::conj(tap));
    trip.emplace_back(br.to, br.from, -y / tap);
  }
  for (int i = 0; i < n; ++i) {
    Complex sh(grid.buses[i].shunt_g, grid.buses[i].shunt_b);
    if (sh != Complex(0.0, 0.0)) trip.emplace_back(i, i, sh);
  }
  Eigen::SparseMatrix<Complex> Y(n, n);
  Y.setFromTriplets(trip.begin(), trip.end());
  return Y;
}

// P_n = (Y^H M_n + M_n Y)/2,  Q_n = (Y^H M_n - M_n Y)/(2i); only row/column n
// of Y contributes, so the result touches bus n and its AC neighbors.
inline void build_injection_matrices(const Grid& grid,
                                     const Eigen::SparseMatrix<Complex>& Y,
                                     std::vector<SpHermitian>* P,
                                     std::vector<SpHermitian>* Q) {
  const int n = grid.n_buses();
  P->assign(n, {});
  Q->assign(n, {});
  // M_n Y has row n equal to Y's row n; Y^H M_n has column n equal to the
  // conjugate of that row. Iterate Y row-wise via the transpose view.
  Eigen::SparseMatrix<Complex, Eigen::RowMajor> Yr(Y);
  for (int row = 0; row < n; ++row) {
    for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(
             Yr, row);
         it; ++it) {
      int col = int(it.col());
      Complex y = it.value();
      // Contribution of (M_n Y)_{row,col} = y and (Y^H M_n)_{col,row} = y*.
      if (col == row) {
        (*P)[row].add(row, row, y.real());
        (*Q)[row].add(row, row, -y.imag());
      } else {
        // P_n entry (n, col) = y/2 from M_nY; entry (col, n) = y*/2 mirrors.
        (*P)[row].add(row, col, 0.5 * y);
        (*Q)[row].add(row, col, Complex(0.0, 0.5) * y);
      }
    }
  }
}

struct BranchMatrices {
  std::vector<SpHermitian> iout, iin, mlo, mhi, a_center, a_lo, a_hi;
};

inline BranchMatrices build_branch_matrices(const Grid& grid) {
  BranchMatrices bm;
  for (const auto& br : grid.ac_branches) {
    const int i = br.from, j = br.to;
    Complex y = br.series_admittance();
    Complex ysh(0.0, br.shunt_b / 2.0);
    Complex tap = std::polar(br.tap, br.shift);
    Complex yff = (y + ysh) / (br.tap * br.tap);
    Complex yft = -y / std::conj(tap);
    Complex ytf = -y / tap;
    Complex ytt = y + ysh;

    // |I_source|^2 = v^H (yhat yhat^H) v with yhat^H v = yff v_i + yft v_j.
    SpHermitian io;
    io.add(i, i, std::norm(yff));
    io.add(i, j, std::conj(yff) * yft);
    io.add(j, j, std::norm(yft));
    bm.iout.push_back(std::move(io));
    SpHermitian ii;
    ii.add(i, i, std::norm(ytf));
    ii.add(i, j, std::conj(ytf) * ytt);
    ii.add(j, j, std::norm(ytt));
    bm.iin.push_back(std::move(ii));

    // Relative magnitude drop nu = 1 - |v_j|/|v_i| in [nu_lo, nu_hi]:
    // hi:  (1 - nu_hi)^2 |v_i|^2 - |v_j|^2 <= 0
    // lo:  |v_j|^2 - (1 - nu_lo)^2 |v_i|^2 <= 0
    double khi = 1.0 - br.drop_hi, klo = 1.0 - br.drop_lo;
    SpHermitian mh, ml;
    mh.add(i, i, khi * khi);
    mh.add(j, j, -1.0);
    ml.add(i, i, -klo * klo);
    ml.add(j, j, 1.0);
    bm.mhi.push_back(std::move(mh));
    bm.mlo.push_back(std::move(ml));

    // Angle difference delta = arg(v_i v_j^*) in [ang_lo, ang_hi], with
    // v^H R v = Re(v_i v_j^*) and v^H S v = -Im(v_i v_j^*) for
    // R = (E_ij + E_ji)/2, S = (E_ij - E_ji)/(2i).
    const double half_pi = 1.5707963267948966;
    if (std::abs(br.ang_lo) >= half_pi || std::abs(br.ang_hi) >= half_pi)
      throw GridError("AngleRangeOutOfDomain: branch " +
                      std::to_string(br.orig_id));
    SpHermitian ac, al, ah;
    ac.add(i, j, Complex(-0.5, 0.0));  // -R: enforces Re(v_i v_j^*) >= 0
    // hi: Im <= tan(hi) Re  <=>  v^H(-S - tan(hi) R)v <= 0;
    // -S has (i,j) entry -1/(2i) = i/2, R has 1/2.
    ah.add(i, j, Complex(-0.5 * std::tan(br.ang_hi), 0.5));
    // lo: Im >= tan(lo) Re  <=>  v^H(S + tan(lo) R)v <= 0
    al.add(i, j, Complex(0.5 * std::tan(br.ang_lo), -0.5));
    bm.a_center.push_back(std::move(ac));
    bm.a_lo.push_back(std::move(al));
    bm.a_hi.push_back(std::move(ah));
  }
  return bm;
}

// DC variable layout and the per-bus linear balance maps. The maps are in
// outflow convention (power drawn from the bus, matching the AC injection
// side of the balance): forward flow p+ draws p+ at the source and delivers
// eta*p+ at the destination; reverse flow symmetrically. Converter reactive
// support enters the reactive balance the same way.
inline void build_dc_maps(const Grid& grid, ConstraintSystem* cs) {
  const int n = grid.n_buses();
  cs->dc_vars.clear();
  cs->dc_lo.clear();
  cs->dc_hi.clear();
  cs->h_p.assign(n, {});
  cs->h_q.assign(n, {});
  int next = 0;
  for (size_t d = 0; d < grid.dc_branches.size(); ++d) {
    const auto& dc = grid.dc_branches[d];
    DcVarLayout lay{next, next + 1, next + 2, next + 3};
    next += 4;
    cs->dc_vars.push_back(lay);
    double eta = 1.0 - dc.loss_factor;
    cs->h_p[dc.from].emplace_back(lay.p_fwd, 1.0);
    cs->h_p[dc.from].emplace_back(lay.p_rev, -eta);
    cs->h_p[dc.to].emplace_back(lay.p_fwd, -eta);
    cs->h_p[dc.to].emplace_back(lay.p_rev, 1.0);
    cs->h_q[dc.from].emplace_back(lay.q_from, -1.0);
    cs->h_q[dc.to].emplace_back(lay.q_to, -1.0);
    cs->dc_lo.emplace_back(lay.p_fwd, 0.0);
    cs->dc_hi.emplace_back(lay.p_fwd, std::max(0.0, dc.p_max));
    cs->dc_lo.emplace_back(lay.p_rev, 0.0);
    cs->dc_hi.emplace_back(lay.p_rev, std::max(0.0, -dc.p_min));
    cs->dc_lo.emplace_back(lay.q_from, -dc.q_capability);
    cs->dc_hi.emplace_back(lay.q_from, dc.q_capability);
    cs->dc_lo.emplace_back(lay.q_to, -dc.q_capability);
    cs->dc_hi.emplace_back(lay.q_to, dc.q_capability);
  }
}

// Canonical row order (frozen; dual indices depend on it):
//   per bus:       voltage lo, voltage hi
//   per AC branch: current out, current in
//   per AC branch: drop lo, drop hi
//   per AC branch: angle center, angle lo, angle hi
//   per DC branch: net flow lo, net flow hi
// followed by the extended device rows, 8 per DC branch:
//   forward lo/hi, reverse lo/hi, q_from lo/hi, q_to lo/hi.
inline void stack_inequalities(const Grid& grid, ConstraintSystem* cs) {
  cs->rows.clear();
  auto push = [&](ConstraintRow r) { cs->rows.push_back(std::move(r)); };
  for (int nidx = 0; nidx < grid.n_buses(); ++nidx) {
    const auto& bus = grid.buses[nidx];
    ConstraintRow lo;  // -trace(M_n V) <= -v_min^2
    lo.C.add(nidx, nidx, -1.0);
    lo.b = -bus.v_min * bus.v_min;
    lo.kind = RowKind::VoltageLo;
    lo.element = nidx;
    push(std::move(lo));
    ConstraintRow hi;
    hi.C.add(nidx, nidx, 1.0);
    hi.b = bus.v_max * bus.v_max;
    hi.kind = RowKind::VoltageHi;
    hi.element = nidx;
    push(std::move(hi));
  }
  for (int k = 0; k < cs->n_ac; ++k) {
    const auto& br = grid.ac_branches[k];
    ConstraintRow out{cs->iout[k], {}, br.i_max_from * br.i_max_from,
                      RowKind::CurrentOut, k};
    push(std::move(out));
    ConstraintRow in{cs->iin[k], {}, br.i_max_to * br.i_max_to,
                     RowKind::CurrentIn, k};
    push(std::move(in));
  }
  for (int k = 0; k < cs->n_ac; ++k) {
    push({cs->mlo[k], {}, 0.0, RowKind::DropLo, k});
    push({cs->mhi[k], {}, 0.0, RowKind::DropHi, k});
  }
  for (int k = 0; k < cs->n_ac; ++k) {
    push({cs->a_center[k], {}, 0.0, RowKind::AngleCenter, k});
    push({cs->a_lo[k], {}, 0.0, RowKind::AngleLo, k});
    push({cs->a_hi[k], {}, 0.0, RowKind::AngleHi, k});
  }
  for (int d = 0; d < cs->n_dc; ++d) {
    const auto& dc = grid.dc_branches[d];
    const auto& lay = cs->dc_vars[d];
    // Net flow p_fwd - p_rev within [p_min, p_max].
    ConstraintRow lo;
    lo.c_dc = {{lay.p_fwd, -1.0}, {lay.p_rev, 1.0}};
    lo.b = -dc.p_min;
    lo.kind = RowKind::DcNetLo;
    lo.element = d;
    push(std::move(lo));
    ConstraintRow hi;
    hi.c_dc = {{lay.p_fwd, 1.0}, {lay.p_rev, -1.0}};
    hi.b = dc.p_max;
    hi.kind = RowKind::DcNetHi;
    hi.element = d;
    push(std::move(hi));
  }
  // Device rows: every DC variable bound, dualized like any other row so
  // that dual stationarity over the DC variables is an exact identity.
  for (int d = 0; d < cs->n_dc; ++d) {
    const auto& lay = cs->dc_vars[d];
    struct Spec {
      int var;
      RowKind lo, hi;
    };
    const Spec specs[] = {{lay.p_fwd, RowKind::DcFwdLo, RowKind::DcFwdHi},
                          {lay.p_rev, RowKind::DcRevLo, RowKind::DcRevHi},
                          {lay.q_from, RowKind::DcQFromLo, RowKind::DcQFromHi},
                          {lay.q_to, RowKind::DcQToLo, RowKind::DcQToHi}};
    for (const auto& sp : specs) {
      ConstraintRow lo;
      lo.c_dc = {{sp.var, -1.0}};
      lo.b = -cs->dc_lo[sp.var].second;
      lo.kind = sp.lo;
      lo.element = d;
      push(std::move(lo));
      ConstraintRow hi;
      hi.c_dc = {{sp.var, 1.0}};
      hi.b = cs->dc_hi[sp.var].second;
      hi.kind = sp.hi;
      hi.element = d;
      push(std::move(hi));
    }
  }
}

inline ConstraintSystem build_constraint_system(const Grid& grid) {
  ConstraintSystem cs;
  cs.n_bus = grid.n_buses();
  cs.n_ac = int(grid.ac_branches.size());
  cs.n_dc = int(grid.dc_branches.size());
  cs.Y = build_admittance(grid);
  build_injection_matrices(grid, cs.Y, &cs.P, &cs.Q);
  BranchMatrices bm = build_branch_matrices(grid);
  cs.iout = std::move(bm.iout);
  cs.iin = std::move(bm.iin);
  cs.mlo = std::move(bm.mlo);
  cs.mhi = std::move(bm.mhi);
  cs.a_center = std::move(bm.a_center);
  cs.a_lo = std::move(bm.a_lo);
  cs.a_hi = std::move(bm.a_hi);
  build_dc_maps(grid, &cs);
  stack_inequalities(grid, &cs);
  return cs;
}

// Psi(Lambda, mu) = sum_n ([Lambda_n]_P P_n + [Lambda_n]_Q Q_n)
//                 + sum_m mu_m C_m, accumulated on the sparse pattern.
inline SpHermitian assemble_psi(const ConstraintSystem& cs,
                                const std::vector<std::array<double, 2>>& lam,
                                const VectorXd& mu) {
  if (int(lam.size()) != cs.n_bus || mu.size() != Eigen::Index(cs.rows.size()))
    throw GridError("DimensionMismatch in assemble_psi");
  std::map<std::pair<int, int>, Complex> acc;
  auto fold = [&](const SpHermitian& A, double w) {
    if (w == 0.0) return;
    for (const auto& [i, j, v] : A.entries) acc[{i, j}] += w * v;
  };
  for (int nidx = 0; nidx < cs.n_bus; ++nidx) {
    fold(cs.P[nidx], lam[nidx][0]);
    fold(cs.Q[nidx], lam[nidx][1]);
  }
  for (size_t m = 0; m < cs.rows.size(); ++m) fold(cs.rows[m].C, mu[m]);
  SpHermitian out;
  for (const auto& [key, v] : acc) out.add(key.first, key.second, v);
  return out;
}

// psi: gradient of the Lagrangian in the DC variables.
inline VectorXd assemble_psi_vec(const ConstraintSystem& cs,
                                 const std::vector<std::array<double, 2>>& lam,
                                 const VectorXd& mu) {
  if (int(lam.size()) != cs.n_bus || mu.size() != Eigen::Index(cs.rows.size()))
    throw GridError("DimensionMismatch in assemble_psi_vec");
  VectorXd psi = VectorXd::Zero(cs.num_dc_vars());
  for (int nidx = 0; nidx < cs.n_bus; ++nidx) {
    for (auto [var, coef] : cs.h_p[nidx]) psi[var] += lam[nidx][0] * coef;
    for (auto [var, coef] : cs.h_q[nidx]) psi[var] += lam[nidx][1] * coef;
  }
  for (size_t m = 0; m < cs.rows.size(); ++m)
    for (auto [var, coef] : cs.rows[m].c_dc) psi[var] += mu[m] * coef;
  return psi;
}

}  // namespace gridlmp
