#include <gtest/gtest.h>

#include <random>

#include "gridlmp/pricing.hpp"
#include "test_util.hpp"

namespace gl = gridlmp;

namespace {

gl::AcBranch line(int from, int to, double r, double x, double i_max) {
  gl::AcBranch br;
  br.from = from;
  br.to = to;
  br.series_r = r;
  br.series_x = x;
  br.i_max_from = i_max;
  br.i_max_to = i_max;
  return br;
}

// Two-bus system: gen at each bus, fixed load at bus 1.
gl::Grid two_bus(double cost0, double cost1, double load_p, double load_q,
                 double i_max) {
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(2);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, i_max));
  for (int b = 0; b < 2; ++b) {
    gl::GenSpec gen;
    gen.bus = b;
    gen.p_max = 3.0;
    gen.q_min = -2.0;
    gen.q_max = 2.0;
    gen.cost = gl::CostFn::linear(b == 0 ? cost0 : cost1);
    g.generators.push_back(gen);
  }
  g.loads.push_back(gl::LoadSpec::fixed_load(1, load_p, load_q));
  return g;
}

// AC path 0-1-2-3 plus a controllable corridor 0 -> 3.
gl::Grid hybrid_four_bus() {
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(4);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, 2.0));
  g.ac_branches.push_back(line(1, 2, 0.02, 0.15, 2.0));
  g.ac_branches.push_back(line(2, 3, 0.01, 0.08, 2.0));
  gl::DcBranch dc;
  dc.from = 0;
  dc.to = 3;
  dc.p_max = 0.8;
  dc.loss_factor = 0.05;
  dc.q_capability = 0.3;
  g.dc_branches.push_back(dc);
  gl::GenSpec g0;
  g0.bus = 0;
  g0.p_max = 3.0;
  g0.q_min = -2.0;
  g0.q_max = 2.0;
  g0.cost = gl::CostFn::quadratic(6.0, 14.0);
  g.generators.push_back(g0);
  gl::GenSpec g3;
  g3.bus = 3;
  g3.p_max = 1.5;
  g3.q_min = -1.0;
  g3.q_max = 1.0;
  g3.cost = gl::CostFn::linear(42.0);
  g.generators.push_back(g3);
  g.loads.push_back(gl::LoadSpec::fixed_load(1, 0.6, 0.1));
  g.loads.push_back(gl::LoadSpec::fixed_load(3, 0.9, 0.2));
  return g;
}

// Meshed triangle whose relaxed solve leaves an open cycle.
gl::Grid triangle(double lim) {
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(3);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, lim));
  g.ac_branches.push_back(line(1, 2, 0.02, 0.12, 3.0));
  g.ac_branches.push_back(line(0, 2, 0.015, 0.09, 3.0));
  for (int b = 0; b < 3; ++b) {
    gl::GenSpec gen;
    gen.bus = b;
    gen.p_max = 2.5;
    gen.q_min = -1.5;
    gen.q_max = 1.5;
    gen.cost = gl::CostFn::linear(b == 0 ? 10.0 : (b == 1 ? 40.0 : 28.0));
    g.generators.push_back(gen);
  }
  g.loads.push_back(gl::LoadSpec::fixed_load(1, 1.2, 0.25));
  return g;
}

// Minimal synthetic solution over a given grid with a prescribed Gram.
gl::SocrSolution fake_solution(const gl::Grid& g, const Eigen::VectorXcd& v) {
  gl::SocrSolution sol;
  sol.status = gl::conic::Status::Optimal;
  sol.w_diag.resize(g.n_buses());
  for (int i = 0; i < g.n_buses(); ++i) sol.w_diag[i] = std::norm(v[i]);
  for (const auto& br : g.ac_branches)
    sol.w_off.push_back(v[br.from] * std::conj(v[br.to]));
  return sol;
}

}  // namespace

TEST(RankCondition, ClosedFormBlocks) {
  auto g = two_bus(10.0, 50.0, 1.0, 0.2, 3.0);
  gl::SocrSolution sol;
  sol.w_diag.resize(2);

  // True rank-1 block vv^H.
  Eigen::VectorXcd v(2);
  v << gl::Complex(1.0, 0.0), std::polar(0.95, 0.1);
  sol.w_diag << std::norm(v[0]), std::norm(v[1]);
  sol.w_off = {v[0] * std::conj(v[1])};
  auto rc = gl::rank_condition(sol, g);
  ASSERT_EQ(rc.size(), 1u);
  EXPECT_LE(rc[0].ratio, 1e-12);
  EXPECT_TRUE(rc[0].pass);

  // Identity block: maximal rank 2.
  sol.w_diag << 1.0, 1.0;
  sol.w_off = {gl::Complex(0.0, 0.0)};
  rc = gl::rank_condition(sol, g);
  EXPECT_NEAR(rc[0].ratio, 1.0, 1e-12);
  EXPECT_FALSE(rc[0].pass);

  // Near-rank-1 block [[1, .999], [.999, 1]].
  sol.w_off = {gl::Complex(0.999, 0.0)};
  rc = gl::rank_condition(sol, g);
  EXPECT_NEAR(rc[0].lambda2, 0.001, 1e-12);
  EXPECT_NEAR(rc[0].ratio, 0.001 / 1.999, 1e-9);
  EXPECT_FALSE(rc[0].pass);
}

TEST(RecoverVoltages, HandTraversal) {
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(3);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, 3.0));
  g.ac_branches.push_back(line(1, 2, 0.01, 0.1, 3.0));
  gl::SocrSolution sol;
  sol.w_diag = gl::VectorXd::Ones(3);
  sol.w_off = {std::polar(1.0, 0.1), std::polar(1.0, 0.2)};
  auto v = gl::recover_voltages(sol, g);
  EXPECT_NEAR(std::arg(v[0]), 0.0, 1e-12);
  EXPECT_NEAR(std::arg(v[1]), -0.1, 1e-12);
  EXPECT_NEAR(std::arg(v[2]), -0.3, 1e-12);

  // Flat profile recovers the unit phasor everywhere.
  sol.w_off = {gl::Complex(1.0, 0.0), gl::Complex(1.0, 0.0)};
  v = gl::recover_voltages(sol, g);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(v[i].real(), 1.0, 1e-12);
    EXPECT_NEAR(v[i].imag(), 0.0, 1e-12);
  }
}

TEST(RecoverVoltages, ExactSolveReproducesGram) {
  auto g = hybrid_four_bus();
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto v = gl::recover_voltages(sol, g);
  for (size_t k = 0; k < g.ac_branches.size(); ++k) {
    const auto& br = g.ac_branches[k];
    EXPECT_LE(std::abs(v[br.from] * std::conj(v[br.to]) - sol.w_off[k]), 1e-7);
  }
}

TEST(RecoverVoltages, DisconnectedAcSubgraphDetected) {
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(3);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, 3.0));  // bus 2 unreachable
  gl::SocrSolution sol;
  sol.w_diag = gl::VectorXd::Ones(3);
  sol.w_off = {gl::Complex(1.0, 0.0)};
  EXPECT_THROW(gl::recover_voltages(sol, g), gl::DisconnectedAcSubgraph);
}

TEST(RelaxationError, DirectFormula) {
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(3);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, 3.0));
  g.ac_branches.push_back(line(1, 2, 0.01, 0.1, 3.0));
  Eigen::VectorXcd v(3);
  v << std::polar(1.02, 0.0), std::polar(0.98, -0.05), std::polar(1.0, -0.12);
  auto sol = fake_solution(g, v);
  auto rec = gl::recover_voltages(sol, g);
  auto err = gl::relaxation_error(sol, rec, g);
  EXPECT_LE(err.max, 1e-12);  // exact rank-1 Gram

  // Shrink one off-diagonal by 1% of its magnitude.
  sol.w_off[0] *= 0.99;
  rec = gl::recover_voltages(sol, g);
  err = gl::relaxation_error(sol, rec, g);
  EXPECT_NEAR(err.kappa[0], 0.01, 1e-12);
  EXPECT_NEAR(err.max, 0.01, 1e-12);
  EXPECT_NEAR(err.mean, 0.005, 1e-12);

  sol.w_diag[0] = 0.0;  // degenerate magnitude
  rec[0] = gl::Complex(0.0, 0.0);
  EXPECT_THROW(gl::relaxation_error(sol, rec, g), gl::ZeroDenominator);
}

TEST(Pricing, MeshedTriangleOpenCycleIsInexact) {
  auto g = triangle(0.5);
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto cs = gl::build_constraint_system(g);
  auto rep = gl::price_report(sol, cs, g);
  // Every 2x2 block is rank 1 and the duals avoid all critical subspaces,
  // yet the mesh cycle does not close: the relaxation is inexact and kappa
  // is the certificate that catches it.
  for (const auto& rc : rep.rank) EXPECT_TRUE(rc.pass);
  EXPECT_FALSE(rep.pathological);
  EXPECT_GT(rep.kappa_max, 1e-3);
  EXPECT_FALSE(rep.exact);
}

TEST(Pricing, HybridGridCertificatesAgree) {
  auto g = hybrid_four_bus();
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto cs = gl::build_constraint_system(g);
  auto rep = gl::price_report(sol, cs, g);
  EXPECT_TRUE(rep.exact);
  EXPECT_FALSE(rep.pathological);
  EXPECT_LE(rep.kappa_max, 1e-6);
  for (size_t k = 0; k < rep.rank.size(); ++k) {
    EXPECT_GT(rep.margins[k], 1e-3);
    EXPECT_TRUE(rep.rank[k].pass);
    // margin > tol implies rank 1 on that branch.
    EXPECT_LE(rep.rank[k].ratio, 1e-6);
  }
  // Sign certificate implies strictly positive margins.
  for (size_t k = 0; k < rep.sign_certified.size(); ++k)
    if (rep.sign_certified[k]) EXPECT_GT(rep.margins[k], 0.0);
  // Prices are reported per MWh.
  for (int b = 0; b < 4; ++b)
    EXPECT_NEAR(rep.lmp_p[b], sol.lam[b][0] / g.base_mva, 1e-12);
  // Recovered point satisfies the balance equations.
  EXPECT_LE(rep.balance_mean_mva, 1e-5 * g.base_mva);
  EXPECT_NO_THROW(gl::lambda_k_zero_check(sol, rep.margins, cs, g));
  EXPECT_NO_THROW(gl::lmp_subdifferential_check(sol, g));
}

TEST(Pricing, ZeroDualsHitEverySubspace) {
  auto g = triangle(3.0);
  auto cs = gl::build_constraint_system(g);
  std::vector<std::array<double, 2>> lam(3, {0.0, 0.0});
  gl::VectorXd mu = gl::VectorXd::Zero(cs.rows.size());
  auto margins = gl::subspace_margins(cs, lam, mu, g);
  for (double m : margins) EXPECT_EQ(m, 0.0);
  auto verdict = gl::pathological_verdict(margins);
  EXPECT_TRUE(verdict.pathological);
  EXPECT_EQ(verdict.branches.size(), 3u);
}

TEST(Pricing, SignCertificateCases) {
  auto g = triangle(3.0);
  std::vector<std::array<double, 2>> lam(3, {20.0, 1.0});
  auto flags = gl::sign_certificate_flags(lam, g);
  for (bool f : flags) EXPECT_TRUE(f);  // all prices positive

  lam[1][1] = -0.5;  // negative reactive price at bus 1
  flags = gl::sign_certificate_flags(lam, g);
  EXPECT_FALSE(flags[0]);  // branch 0-1
  EXPECT_FALSE(flags[1]);  // branch 1-2
  EXPECT_TRUE(flags[2]);   // branch 0-2 untouched

  // Zero active prices at both ends fail the strictness condition.
  lam = {{{0.0, 0.0}, {0.0, 0.0}, {20.0, 0.0}}};
  flags = gl::sign_certificate_flags(lam, g);
  EXPECT_FALSE(flags[0]);
}

TEST(Pricing, BranchDualIdentityNegativeControl) {
  auto g = hybrid_four_bus();
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto cs = gl::build_constraint_system(g);
  auto margins = gl::subspace_margins(cs, sol.lam, sol.mu, g);
  sol.lam_branch[0](0, 1) += gl::Complex(1.0, 0.0);  // corrupt one block
  EXPECT_THROW(gl::lambda_k_zero_check(sol, margins, cs, g),
               gl::CertificateInconsistency);
}

TEST(Pricing, ZeroCostDegenerateInstance) {
  auto g = two_bus(0.0, 0.0, 0.3, 0.0, 3.0);
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto cs = gl::build_constraint_system(g);
  auto margins = gl::subspace_margins(cs, sol.lam, sol.mu, g);
  // Free energy everywhere: prices vanish, the duals sit inside the
  // critical subspace and the branch dual must vanish with them.
  EXPECT_LE(margins[0], 1e-5);
  EXPECT_NO_THROW(gl::lambda_k_zero_check(sol, margins, cs, g, 1e-5));
  auto verdict = gl::pathological_verdict(margins);
  EXPECT_TRUE(verdict.pathological);
}

TEST(Pricing, SubspaceDimensionBounds) {
  std::mt19937 rng(11);
  auto g = gl::testutil::make_random_grid(rng, 4, 2, true);
  auto cs = gl::build_constraint_system(g);
  const int cols = 2 * cs.n_bus + int(cs.rows.size());
  for (size_t k = 0; k < g.ac_branches.size(); ++k) {
    auto sd = gl::subspace_dimension(cs, int(k), g);
    EXPECT_GE(sd.l_rank, 1);
    EXPECT_LE(sd.l_rank, 2);
    EXPECT_EQ(sd.dim, cols - sd.l_rank);
  }
}

TEST(Pricing, CollinearCouplingDetectedAsRankOne) {
  // Synthetic system whose branch-pair entries are all real multiples of
  // each other: the stacked real matrix collapses to rank 1.
  gl::Grid g;
  g.base_mva = 1.0;
  g.buses.resize(2);
  g.ac_branches.push_back(line(0, 1, 0.01, 0.1, 3.0));
  gl::ConstraintSystem cs;
  cs.n_bus = 2;
  cs.n_ac = 1;
  cs.P.resize(2);
  cs.Q.resize(2);
  cs.P[0].add(0, 1, gl::Complex(1.0, 0.0));
  cs.P[1].add(0, 1, gl::Complex(-1.0, 0.0));
  cs.Q[0].add(0, 1, gl::Complex(2.0, 0.0));
  auto sd = gl::subspace_dimension(cs, 0, g);
  EXPECT_EQ(sd.l_rank, 1);
  EXPECT_EQ(sd.dim, 2 * 2 + 0 - 1);
}

TEST(Pricing, BalanceResidualOracles) {
  // Zero dispatch, zero load, flat voltage, lossless network: exact zero.
  gl::Grid g0;
  g0.base_mva = 1.0;
  g0.buses.resize(2);
  auto br = line(0, 1, 0.0, 0.1, 3.0);
  g0.ac_branches.push_back(br);
  auto cs0 = gl::build_constraint_system(g0);
  Eigen::VectorXcd flat = Eigen::VectorXcd::Ones(2);
  gl::VectorXd none;
  auto res = gl::balance_residual(g0, cs0, flat, gl::VectorXd::Zero(0), none,
                                  none, none, none);
  for (const auto& r : res) EXPECT_LE(std::abs(r), 1e-12);

  // Lossless dispatch evaluated at the relaxed point misses by exactly the
  // series losses; cross-check against the I^2 R oracle.
  auto g = two_bus(10.0, 50.0, 1.0, 0.2, 3.0);
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto cs = gl::build_constraint_system(g);
  auto v = gl::recover_voltages(sol, g);
  gl::VectorXd dc_gen(2), gen_q = sol.gen_q, load_p = sol.load_p,
               load_q = sol.load_q;
  dc_gen << 1.0, 0.0;  // lossless economic dispatch: cheap unit covers all
  auto res2 = gl::balance_residual(g, cs, v, sol.p, dc_gen, gen_q, load_p,
                                   load_q);
  double total_p = 0.0;
  for (const auto& r : res2) total_p += r.real();
  gl::Complex y = g.ac_branches[0].series_admittance();
  double i2r = g.ac_branches[0].series_r * std::norm(y * (v[0] - v[1]));
  EXPECT_NEAR(total_p, i2r * g.base_mva, 1e-6);
  EXPECT_GT(std::abs(total_p), 1e-4);  // losses are genuinely nonzero
}

TEST(Pricing, SubdifferentialNegativeControl) {
  auto g = two_bus(10.0, 50.0, 1.0, 0.2, 3.0);
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  EXPECT_NO_THROW(gl::lmp_subdifferential_check(sol, g));
  // The cheap unit is strictly interior, so its price equals marginal cost.
  EXPECT_NEAR(sol.lam[0][0], 10.0, 1e-4);
  sol.lam[0][0] = 25.0;  // interior unit priced off its marginal cost
  EXPECT_THROW(gl::lmp_subdifferential_check(sol, g),
               gl::SubdifferentialViolation);
}

TEST(Pricing, ReportSerialization) {
  auto g = hybrid_four_bus();
  auto sol = gl::solve_socr(g, 1e-9);
  ASSERT_EQ(sol.status, gl::conic::Status::Optimal);
  auto cs = gl::build_constraint_system(g);
  auto rep = gl::price_report(sol, cs, g);
  auto csv = gl::report_to_csv(rep, g);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bus_id,lmp_p,lmp_q,v_mag,v_ang");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);  // header + 4 buses
  auto j = gl::report_to_json(rep, g);
  EXPECT_TRUE(j["exact"].get<bool>());
  EXPECT_EQ(j["buses"].size(), 4u);
  EXPECT_EQ(j["branches"].size(), 3u);
  EXPECT_TRUE(j["branches"][0].contains("margin"));
}
