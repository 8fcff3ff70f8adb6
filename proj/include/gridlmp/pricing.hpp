// Certified nodal prices from a relaxation solve: per-branch rank checks,
// dual-subspace margins, price-sign certificates, voltage recovery,
// relaxation errors, and the exactness verdict.
#pragma once

#include <queue>

#include "gridlmp/socr.hpp"
#include "nlohmann/json.hpp"

namespace gridlmp {

struct PricingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DisconnectedAcSubgraph : PricingError {
  using PricingError::PricingError;
};
struct ZeroDenominator : PricingError {
  using PricingError::PricingError;
};
struct CertificateInconsistency : PricingError {
  using PricingError::PricingError;
};
struct SubdifferentialViolation : PricingError {
  using PricingError::PricingError;
};

struct RankCheck {
  double lambda1 = 0.0, lambda2 = 0.0;  // eigenvalues of the 2x2 block
  double ratio = 0.0;
  bool pass = false;
};

// Eigenvalues of each partial-Gram block [[W_ii, W_ij], [W_ij*, W_jj]];
// exactness requires every block to be rank 1 to tolerance.
inline std::vector<RankCheck> rank_condition(const SocrSolution& sol,
                                             const Grid& grid,
                                             double tol = 1e-6) {
  double floor = 1e-12 * sol.w_diag.maxCoeff();
  std::vector<RankCheck> out;
  for (size_t k = 0; k < grid.ac_branches.size(); ++k) {
    const auto& br = grid.ac_branches[k];
    double a = sol.w_diag[br.from], c = sol.w_diag[br.to];
    double t = 0.5 * (a + c);
    double d = std::hypot(0.5 * (a - c), std::abs(sol.w_off[k]));
    RankCheck rc;
    rc.lambda1 = t + d;
    rc.lambda2 = t - d;
    rc.ratio = rc.lambda2 / std::max(rc.lambda1, floor);
    rc.pass = rc.ratio <= tol;
    out.push_back(rc);
  }
  return out;
}

// Magnitudes from the diagonal, angles accumulated over a spanning tree of
// the AC subgraph starting at the reference bus. On meshed subgraphs the
// off-tree angle mismatch shows up in the relaxation errors instead.
inline VectorXcd recover_voltages(const SocrSolution& sol, const Grid& grid) {
  const int n = grid.n_buses();
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (other bus, branch)
  for (size_t k = 0; k < grid.ac_branches.size(); ++k) {
    adj[grid.ac_branches[k].from].emplace_back(grid.ac_branches[k].to, int(k));
    adj[grid.ac_branches[k].to].emplace_back(grid.ac_branches[k].from, int(k));
  }
  std::vector<double> theta(n, 0.0);
  std::vector<bool> seen(n, false);
  std::queue<int> q;
  q.push(grid.reference_bus);
  seen[grid.reference_bus] = true;
  while (!q.empty()) {
    int i = q.front();
    q.pop();
    for (auto [j, k] : adj[i]) {
      if (seen[j]) continue;
      // W_ij = v_i v_j^*  =>  arg(W_ij) = theta_i - theta_j.
      double arg = std::arg(sol.w_off[k]);
      theta[j] = grid.ac_branches[k].from == i ? theta[i] - arg : theta[i] + arg;
      seen[j] = true;
      q.push(j);
    }
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i]) throw DisconnectedAcSubgraph("bus unreachable over AC lines");
  VectorXcd v(n);
  for (int i = 0; i < n; ++i)
    v[i] = std::polar(std::sqrt(std::max(sol.w_diag[i], 0.0)), theta[i]);
  return v;
}

struct RelaxationError {
  std::vector<double> kappa;  // per AC branch
  double mean = 0.0, max = 0.0;
};

// kappa_k = |(v_i v_j^* - W_ij) / (v_i v_j^*)|: per-branch deviation of the
// relaxed Gram entry from the recovered rank-1 point.
inline RelaxationError relaxation_error(const SocrSolution& sol,
                                        const VectorXcd& v, const Grid& grid) {
  RelaxationError out;
  double floor = 1e-12;
  for (size_t k = 0; k < grid.ac_branches.size(); ++k) {
    const auto& br = grid.ac_branches[k];
    Complex vv = v[br.from] * std::conj(v[br.to]);
    if (std::abs(vv) < floor)
      throw ZeroDenominator("degenerate voltage product on a branch");
    out.kappa.push_back(std::abs((vv - sol.w_off[k]) / vv));
  }
  for (double k : out.kappa) {
    out.mean += k / double(out.kappa.size());
    out.max = std::max(out.max, k);
  }
  return out;
}

// |[Psi]_{ij}| per AC branch: a nonzero off-diagonal of the dual matrix on a
// branch pair forces the corresponding block to be rank 1 at optimum.
inline std::vector<double> subspace_margins(
    const ConstraintSystem& cs, const std::vector<std::array<double, 2>>& lam,
    const VectorXd& mu, const Grid& grid) {
  SpHermitian psi = assemble_psi(cs, lam, mu);
  std::map<std::pair<int, int>, Complex> off;
  for (const auto& [i, j, val] : psi.entries)
    if (i != j) off[{i, j}] += val;
  std::vector<double> out;
  for (const auto& br : grid.ac_branches) {
    auto key = std::minmax(br.from, br.to);
    auto it = off.find({key.first, key.second});
    out.push_back(it == off.end() ? 0.0 : std::abs(it->second));
  }
  return out;
}

// Price-sign certificate: nonnegative nodal prices at both ends with
// strictly positive active prices certify the branch without touching Psi.
inline std::vector<bool> sign_certificate_flags(
    const std::vector<std::array<double, 2>>& lam, const Grid& grid,
    double strict = 1e-8) {
  std::vector<bool> out;
  for (const auto& br : grid.ac_branches) {
    const auto& li = lam[br.from];
    const auto& lj = lam[br.to];
    bool nonneg = li[0] >= 0 && li[1] >= 0 && lj[0] >= 0 && lj[1] >= 0;
    out.push_back(nonneg && li[0] + lj[0] > strict);
  }
  return out;
}

// Consistency of the branch duals with the assembled Psi: zero-margin
// branches must carry a vanishing dual block, and elsewhere the off-diagonal
// of the block must reproduce the Psi entry.
inline void lambda_k_zero_check(const SocrSolution& sol,
                                const std::vector<double>& margins,
                                const ConstraintSystem& cs, const Grid& grid,
                                double tol = 1e-6) {
  SpHermitian psi = assemble_psi(cs, sol.lam, sol.mu);
  std::map<std::pair<int, int>, Complex> off;
  for (const auto& [i, j, val] : psi.entries)
    if (i != j) off[{i, j}] += val;
  // Off-diagonals of the branch duals, accumulated on the bus-pair pattern
  // (parallel branches share one Psi entry).
  std::map<std::pair<int, int>, Complex> lk;
  for (size_t k = 0; k < grid.ac_branches.size(); ++k) {
    const auto& br = grid.ac_branches[k];
    Complex v = sol.lam_branch[k](0, 1);  // (from, to) frame
    if (br.from > br.to) v = std::conj(v);
    lk[std::minmax(br.from, br.to)] += v;
  }
  for (size_t k = 0; k < grid.ac_branches.size(); ++k) {
    const auto& br = grid.ac_branches[k];
    if (margins[k] <= tol) {
      if (sol.lam_branch[k].norm() > std::sqrt(tol))
        throw CertificateInconsistency(
            "nonzero branch dual inside a critical subspace");
      continue;
    }
    auto key = std::minmax(br.from, br.to);
    Complex psi_ij = off.count(key) ? off[key] : Complex(0, 0);
    if (std::abs(lk[key] - psi_ij) > tol * (1.0 + std::abs(psi_ij)))
      throw CertificateInconsistency(
          "branch dual off-diagonal does not match Psi");
  }
}

struct SubspaceDim {
  int l_rank = 0;  // 1 or 2
  int dim = 0;     // dimension of the critical subspace
};

// Real 2 x (2N + M) matrix of the branch-pair entries of all constraint
// matrices; its rank determines the codimension of the critical subspace.
inline SubspaceDim subspace_dimension(const ConstraintSystem& cs, int branch,
                                      const Grid& grid) {
  const auto& br = grid.ac_branches[branch];
  auto key = std::minmax(br.from, br.to);
  auto entry_at = [&](const SpHermitian& A) {
    Complex acc(0, 0);
    for (const auto& [i, j, v] : A.entries)
      if (i == key.first && j == key.second) acc += v;
    return acc;
  };
  const int cols = 2 * cs.n_bus + int(cs.rows.size());
  Eigen::MatrixXd L(2, cols);
  int c = 0;
  for (int nidx = 0; nidx < cs.n_bus; ++nidx) {
    Complex p = entry_at(cs.P[nidx]), q = entry_at(cs.Q[nidx]);
    L.col(c++) << p.real(), p.imag();
    L.col(c++) << q.real(), q.imag();
  }
  for (const auto& row : cs.rows) {
    Complex v = entry_at(row.C);
    L.col(c++) << v.real(), v.imag();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(L);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > 1e-10 * sv[0]) ++rank;
  return {rank, cols - rank};
}

struct PathologicalVerdict {
  bool pathological = false;
  std::vector<int> branches;  // margin at or below threshold
};

// Relative margin rule: the duals sit inside some critical subspace when an
// off-diagonal of Psi vanishes compared to the largest one.
inline PathologicalVerdict pathological_verdict(
    const std::vector<double>& margins, double rel_tol = 1e-5) {
  PathologicalVerdict out;
  double scale = 0.0;
  for (double m : margins) scale = std::max(scale, m);
  for (size_t k = 0; k < margins.size(); ++k)
    if (margins[k] <= rel_tol * std::max(scale, 1.0)) {
      out.pathological = true;
      out.branches.push_back(int(k));
    }
  return out;
}

// Apparent-power mismatch of a candidate point against the balance
// equations, per bus, in MVA.
inline std::vector<Complex> balance_residual(
    const Grid& grid, const ConstraintSystem& cs, const VectorXcd& v,
    const VectorXd& p, const VectorXd& gen_p, const VectorXd& gen_q,
    const VectorXd& load_p, const VectorXd& load_q) {
  const int n = grid.n_buses();
  std::vector<Complex> out(n, Complex(0, 0));
  for (int b = 0; b < n; ++b) {
    double rp = cs.P[b].quad_form(v), rq = cs.Q[b].quad_form(v);
    for (auto [var, coef] : cs.h_p[b]) rp += coef * p[var];
    for (auto [var, coef] : cs.h_q[b]) rq += coef * p[var];
    out[b] = Complex(rp, rq);
  }
  for (size_t i = 0; i < grid.generators.size(); ++i)
    out[grid.generators[i].bus] -= Complex(gen_p[i], gen_q[i]);
  for (size_t i = 0; i < grid.loads.size(); ++i)
    out[grid.loads[i].bus] += Complex(load_p[i], load_q[i]);
  for (auto& r : out) r *= grid.base_mva;
  return out;
}

// Each generator's price must support its dispatch: interior points match
// the marginal cost exactly, bound points may drift one-sidedly.
inline void lmp_subdifferential_check(const SocrSolution& sol,
                                      const Grid& grid, double tol = 1e-5) {
  for (size_t i = 0; i < grid.generators.size(); ++i) {
    const auto& gen = grid.generators[i];
    if (!gen.is_box()) continue;  // vertex prices handled by the profit fn
    double g = sol.gen_p[i], lp = sol.lam[gen.bus][0];
    auto [lo, hi] = gen.cost.subdiff(g);
    bool at_hi = g >= gen.p_max - tol, at_lo = g <= gen.p_min + tol;
    bool ok = at_hi ? lp >= lo - tol
                    : (at_lo ? lp <= hi + tol
                             : (lp >= lo - tol && lp <= hi + tol));
    if (!ok)
      throw SubdifferentialViolation("active price outside the supporting set");
    double q = sol.gen_q[i], lq = sol.lam[gen.bus][1];
    bool q_hi = q >= gen.q_max - tol, q_lo = q <= gen.q_min + tol;
    bool qok = (q_hi && lq >= -tol) || (q_lo && lq <= tol) ||
               (std::abs(lq) <= tol);
    if (!qok)
      throw SubdifferentialViolation("reactive price outside the supporting set");
  }
}

struct PricingReport {
  bool exact = false;
  bool pathological = false;
  std::vector<int> pathological_branches;
  std::vector<double> lmp_p, lmp_q;  // $/MWh per bus
  double kappa_mean = 0.0, kappa_max = 0.0;
  std::vector<RankCheck> rank;
  std::vector<double> margins;
  std::vector<bool> sign_certified;
  double sign_certified_fraction = 0.0;
  VectorXcd recovered_v;
  std::vector<Complex> balance_mva;
  double balance_mean_mva = 0.0;
};

// Exactness verdict: clean margins certify every branch outright; otherwise
// the per-branch rank condition decides. Prices are reported in $/MWh.
inline PricingReport price_report(const SocrSolution& sol,
                                  const ConstraintSystem& cs, const Grid& grid,
                                  double rank_tol = 1e-6,
                                  double margin_rel_tol = 1e-5,
                                  double kappa_tol = 1e-6) {
  if (sol.status != conic::Status::Optimal)
    throw PricingError("pricing requires an optimal solve");
  PricingReport rep;
  for (int b = 0; b < grid.n_buses(); ++b) {
    rep.lmp_p.push_back(sol.lam[b][0] / grid.base_mva);
    rep.lmp_q.push_back(sol.lam[b][1] / grid.base_mva);
  }
  rep.rank = rank_condition(sol, grid, rank_tol);
  rep.margins = subspace_margins(cs, sol.lam, sol.mu, grid);
  rep.sign_certified = sign_certificate_flags(sol.lam, grid);
  int certified = 0;
  for (bool f : rep.sign_certified) certified += f;
  rep.sign_certified_fraction =
      rep.sign_certified.empty()
          ? 1.0
          : double(certified) / double(rep.sign_certified.size());
  auto verdict = pathological_verdict(rep.margins, margin_rel_tol);
  rep.pathological = verdict.pathological;
  rep.pathological_branches = verdict.branches;
  bool all_rank = true;
  for (const auto& rc : rep.rank) all_rank &= rc.pass;
  rep.exact = rep.pathological ? all_rank : true;
  rep.recovered_v = recover_voltages(sol, grid);
  auto err = relaxation_error(sol, rep.recovered_v, grid);
  rep.kappa_mean = err.mean;
  rep.kappa_max = err.max;
  // Certificates must agree, and per-branch rank 1 only guarantees a rank-1
  // completion on tree AC subgraphs: the recovered point must also close
  // every cycle, which kappa measures.
  if (!all_rank || rep.kappa_max > kappa_tol) rep.exact = false;
  rep.balance_mva =
      balance_residual(grid, cs, rep.recovered_v, sol.p, sol.gen_p, sol.gen_q,
                       sol.load_p, sol.load_q);
  for (const auto& r : rep.balance_mva)
    rep.balance_mean_mva += std::abs(r) / double(rep.balance_mva.size());
  return rep;
}

// bus_id,lmp_p,lmp_q,v_mag,v_ang
inline std::string report_to_csv(const PricingReport& rep, const Grid& grid) {
  std::string out = "bus_id,lmp_p,lmp_q,v_mag,v_ang\n";
  char buf[160];
  for (int b = 0; b < grid.n_buses(); ++b) {
    int id = grid.buses[b].orig_id >= 0 ? grid.buses[b].orig_id : b;
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", id,
                  rep.lmp_p[b], rep.lmp_q[b], std::abs(rep.recovered_v[b]),
                  std::arg(rep.recovered_v[b]));
    out += buf;
  }
  return out;
}

inline nlohmann::json report_to_json(const PricingReport& rep,
                                     const Grid& grid) {
  nlohmann::json j;
  j["exact"] = rep.exact;
  j["pathological"] = rep.pathological;
  j["pathological_branches"] = rep.pathological_branches;
  j["kappa_mean"] = rep.kappa_mean;
  j["kappa_max"] = rep.kappa_max;
  j["sign_certified_fraction"] = rep.sign_certified_fraction;
  j["balance_mean_mva"] = rep.balance_mean_mva;
  auto& buses = j["buses"] = nlohmann::json::array();
  for (int b = 0; b < grid.n_buses(); ++b) {
    buses.push_back({{"id", grid.buses[b].orig_id >= 0 ? grid.buses[b].orig_id
                                                       : b},
                     {"lmp_p", rep.lmp_p[b]},
                     {"lmp_q", rep.lmp_q[b]},
                     {"v_mag", std::abs(rep.recovered_v[b])},
                     {"v_ang", std::arg(rep.recovered_v[b])}});
  }
  auto& branches = j["branches"] = nlohmann::json::array();
  for (size_t k = 0; k < rep.rank.size(); ++k) {
    branches.push_back({{"rank_ratio", rep.rank[k].ratio},
                        {"rank_pass", rep.rank[k].pass},
                        {"margin", rep.margins[k]},
                        {"sign_certified", bool(rep.sign_certified[k])}});
  }
  return j;
}

}  // namespace gridlmp
