// Linearized "DC power flow" OPF baseline: active power only, lossless
// branches, flat voltage profile, angles as decision variables.
#pragma once

#include "gridlmp/socr.hpp"

namespace gridlmp {

struct DcOpfSolution {
  conic::Status status = conic::Status::NumericalFailure;
  VectorXd theta;    // bus angles, radians; reference fixed at zero
  VectorXd flow;     // AC branch flows, p.u., measured from -> to
  VectorXd dc_flow;  // controllable branch net flows, p.u., from -> to
  VectorXd gen_p;    // dispatch per generator, p.u.
  VectorXd load_p;   // consumption per load, p.u.
  VectorXd lmp;      // balance-row duals, $/p.u.-h (divide by base for $/MWh)
  double objective = 0.0;
  double comp_slack = 0.0;  // worst LP complementary-slackness product
};

namespace detail {

// Projection of the capability set onto the active-power axis.
inline std::pair<double, double> gen_p_bounds(const GenSpec& gen) {
  if (gen.is_box()) return {gen.p_min, gen.p_max};
  double lo = 1e300, hi = -1e300;
  for (auto [p, q] : gen.polygon) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  return {lo, hi};
}

}  // namespace detail

inline DcOpfSolution solve_dcopf(const Grid& grid, double tol = 5e-8) {
  using conic::AffExpr;
  const int n = grid.n_buses();
  const int n_ac = int(grid.ac_branches.size());
  const int n_dc = int(grid.dc_branches.size());
  conic::Program prog;
  std::vector<int> theta(n), gen_v(grid.generators.size()),
      load_v(grid.loads.size()), dc_v(n_dc);
  for (int i = 0; i < n; ++i) theta[i] = prog.new_var();
  prog.add_eq(AffExpr::var(theta[grid.reference_bus]), 0.0);

  double obj_offset = 0.0;
  for (size_t i = 0; i < grid.generators.size(); ++i) {
    const auto& gen = grid.generators[i];
    gen_v[i] = prog.new_var();
    auto [lo, hi] = detail::gen_p_bounds(gen);
    detail::add_range(&prog, gen_v[i], lo, hi);
    obj_offset += detail::minimize_convex(&prog, gen.cost, gen_v[i]);
  }
  for (size_t i = 0; i < grid.loads.size(); ++i) {
    const auto& load = grid.loads[i];
    load_v[i] = prog.new_var();
    detail::add_range(&prog, load_v[i], load.p_min, load.p_max);
    if (!load.benefit.zero)
      obj_offset += detail::minimize_convex(&prog, load.benefit.neg, load_v[i]);
  }
  // Controllable branches carry a free net flow within the symmetric
  // rating; losses are ignored in this approximation.
  for (int k = 0; k < n_dc; ++k) {
    dc_v[k] = prog.new_var();
    detail::add_range(&prog, dc_v[k], -grid.dc_branches[k].p_max,
                      grid.dc_branches[k].p_max);
  }

  // Branch flow b * (theta_i - theta_j - shift) as an affine expression,
  // and its rating at nominal (1.0 p.u.) voltage.
  std::vector<AffExpr> flows(n_ac);
  for (int k = 0; k < n_ac; ++k) {
    const auto& br = grid.ac_branches[k];
    double b = 1.0 / (br.series_x * br.tap);
    AffExpr f;
    f.add(theta[br.from], b).add(theta[br.to], -b);
    f.constant = -b * br.shift;
    flows[k] = f;
    double lim = std::min(br.i_max_from, br.i_max_to);
    AffExpr neg;
    neg.add(theta[br.from], -b).add(theta[br.to], b);
    neg.constant = -f.constant;
    prog.add_ineq(f, lim);
    prog.add_ineq(neg, lim);
  }

  // Balance per bus: outflow - generation + load = 0. The dual of this row
  // is the (active-power) locational marginal price.
  std::vector<AffExpr> bal(n);
  for (int k = 0; k < n_ac; ++k) {
    const auto& br = grid.ac_branches[k];
    for (auto [var, coef] : flows[k].terms) {
      bal[br.from].add(var, coef);
      bal[br.to].add(var, -coef);
    }
    bal[br.from].constant += flows[k].constant;
    bal[br.to].constant -= flows[k].constant;
  }
  for (int k = 0; k < n_dc; ++k) {
    bal[grid.dc_branches[k].from].add(dc_v[k], 1.0);
    bal[grid.dc_branches[k].to].add(dc_v[k], -1.0);
  }
  for (size_t i = 0; i < grid.generators.size(); ++i)
    bal[grid.generators[i].bus].add(gen_v[i], -1.0);
  for (size_t i = 0; i < grid.loads.size(); ++i)
    bal[grid.loads[i].bus].add(load_v[i], 1.0);
  std::vector<int> bal_row(n);
  for (int b = 0; b < n; ++b) {
    double c = bal[b].constant;
    bal[b].constant = 0.0;
    bal_row[b] = prog.add_eq(bal[b], -c);
  }

  conic::Solution csol = conic::solve(prog, tol);
  DcOpfSolution sol;
  sol.status = csol.status;
  if (csol.status != conic::Status::Optimal) return sol;
  sol.theta.resize(n);
  for (int i = 0; i < n; ++i) sol.theta[i] = csol.x[theta[i]];
  sol.flow.resize(n_ac);
  for (int k = 0; k < n_ac; ++k) sol.flow[k] = flows[k].eval(csol.x);
  sol.dc_flow.resize(n_dc);
  for (int k = 0; k < n_dc; ++k) sol.dc_flow[k] = csol.x[dc_v[k]];
  sol.gen_p.resize(gen_v.size());
  for (size_t i = 0; i < gen_v.size(); ++i) sol.gen_p[i] = csol.x[gen_v[i]];
  sol.load_p.resize(load_v.size());
  for (size_t i = 0; i < load_v.size(); ++i) sol.load_p[i] = csol.x[load_v[i]];
  sol.lmp.resize(n);
  for (int b = 0; b < n; ++b) sol.lmp[b] = csol.y[bal_row[b]];
  sol.objective = csol.objective + obj_offset;
  for (const auto& blk : prog.blocks())
    if (blk.type == conic::ConeType::Nonneg)
      sol.comp_slack = std::max(
          sol.comp_slack, std::abs(csol.s[blk.offset] * csol.z[blk.offset]));
  return sol;
}

}  // namespace gridlmp
