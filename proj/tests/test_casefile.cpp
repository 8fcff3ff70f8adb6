#include <gtest/gtest.h>

#include "gridlmp/casefile.hpp"
#include "test_util.hpp"

namespace gl = gridlmp;

namespace {

// Small well-formed case: 3 buses, 2 gens, 3 branches (one out of service).
const char* kCase3 = R"(function mpc = case3
% three-bus test fixture
mpc.version = '2';
mpc.baseMVA = 100;

%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	100	30	0	5	1	1	0	230	1	1.1	0.9;
	3	1	50	10	2	0	1	1	0	230	1	1.1	0.9;
];

%	bus	Pg	Qg	Qmax	Qmin	Vg	mBase	status	Pmax	Pmin
mpc.gen = [
	1	0	0	150	-20	1	100	1	250	10;
	3	0	0	50	-10	1	100	1	100	0;
];

%	fbus	tbus	r	x	b	rateA	rateB	rateC	ratio	angle	status	angmin	angmax
mpc.branch = [
	1	2	0.02	0.2	0.04	130	0	0	0	0	1	-30	30;
	2	3	0.01	0.1	0.02	0	0	0	0.98	3	1	0	0;
	1	3	0.03	0.25	0	100	0	0	0	0	0	-20	20;
];

%	model	startup	shutdown	n	c2	c1	c0
mpc.gencost = [
	2	0	0	3	0.01	40	0;
	2	0	0	2	35	0;
];
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

void expect_grid_eq(const gl::Grid& a, const gl::Grid& b) {
  EXPECT_EQ(a.base_mva, b.base_mva);
  EXPECT_EQ(a.reference_bus, b.reference_bus);
  ASSERT_EQ(a.buses.size(), b.buses.size());
  for (size_t i = 0; i < a.buses.size(); ++i) {
    EXPECT_EQ(a.buses[i].v_min, b.buses[i].v_min);
    EXPECT_EQ(a.buses[i].v_max, b.buses[i].v_max);
    EXPECT_EQ(a.buses[i].shunt_g, b.buses[i].shunt_g);
    EXPECT_EQ(a.buses[i].shunt_b, b.buses[i].shunt_b);
    EXPECT_EQ(a.buses[i].orig_id, b.buses[i].orig_id);
  }
  ASSERT_EQ(a.ac_branches.size(), b.ac_branches.size());
  for (size_t i = 0; i < a.ac_branches.size(); ++i) {
    const auto& x = a.ac_branches[i];
    const auto& y = b.ac_branches[i];
    EXPECT_EQ(x.from, y.from);
    EXPECT_EQ(x.to, y.to);
    EXPECT_EQ(x.series_r, y.series_r);
    EXPECT_EQ(x.series_x, y.series_x);
    EXPECT_EQ(x.shunt_b, y.shunt_b);
    EXPECT_EQ(x.tap, y.tap);
    EXPECT_EQ(x.shift, y.shift);
    EXPECT_EQ(x.i_max_from, y.i_max_from);
    EXPECT_EQ(x.i_max_to, y.i_max_to);
    EXPECT_EQ(x.drop_lo, y.drop_lo);
    EXPECT_EQ(x.drop_hi, y.drop_hi);
    EXPECT_EQ(x.ang_lo, y.ang_lo);
    EXPECT_EQ(x.ang_hi, y.ang_hi);
    EXPECT_EQ(x.orig_id, y.orig_id);
  }
  ASSERT_EQ(a.dc_branches.size(), b.dc_branches.size());
  for (size_t i = 0; i < a.dc_branches.size(); ++i) {
    const auto& x = a.dc_branches[i];
    const auto& y = b.dc_branches[i];
    EXPECT_EQ(x.from, y.from);
    EXPECT_EQ(x.to, y.to);
    EXPECT_EQ(x.p_min, y.p_min);
    EXPECT_EQ(x.p_max, y.p_max);
    EXPECT_EQ(x.loss_factor, y.loss_factor);
    EXPECT_EQ(x.q_capability, y.q_capability);
    EXPECT_EQ(x.orig_id, y.orig_id);
  }
  ASSERT_EQ(a.generators.size(), b.generators.size());
  for (size_t i = 0; i < a.generators.size(); ++i) {
    const auto& x = a.generators[i];
    const auto& y = b.generators[i];
    EXPECT_EQ(x.bus, y.bus);
    EXPECT_EQ(x.p_min, y.p_min);
    EXPECT_EQ(x.p_max, y.p_max);
    EXPECT_EQ(x.q_min, y.q_min);
    EXPECT_EQ(x.q_max, y.q_max);
    EXPECT_EQ(x.polygon, y.polygon);
    EXPECT_EQ(x.cost.kind, y.cost.kind);
    for (double p = 0.0; p <= 1.0; p += 0.125)
      EXPECT_EQ(x.cost.eval(p), y.cost.eval(p));
  }
  ASSERT_EQ(a.loads.size(), b.loads.size());
  for (size_t i = 0; i < a.loads.size(); ++i) {
    const auto& x = a.loads[i];
    const auto& y = b.loads[i];
    EXPECT_EQ(x.bus, y.bus);
    EXPECT_EQ(x.p_min, y.p_min);
    EXPECT_EQ(x.p_max, y.p_max);
    EXPECT_EQ(x.q_min, y.q_min);
    EXPECT_EQ(x.q_max, y.q_max);
    EXPECT_EQ(x.benefit.zero, y.benefit.zero);
    if (!x.benefit.zero)
      for (double p = 0.0; p <= 1.0; p += 0.125)
        EXPECT_EQ(x.benefit.eval(p), y.benefit.eval(p));
  }
}

}  // namespace

TEST(ParseMatpower, TablesAndShapes) {
  auto rc = gl::parse_matpower(kCase3);
  EXPECT_EQ(rc.base_mva, 100.0);
  ASSERT_EQ(rc.bus_table.size(), 3u);
  ASSERT_EQ(rc.gen_table.size(), 2u);
  ASSERT_EQ(rc.branch_table.size(), 3u);
  ASSERT_EQ(rc.gencost_table.size(), 2u);
  EXPECT_EQ(rc.bus_table[1][gl::mpc::PD], 100.0);
  EXPECT_EQ(rc.branch_table[2][gl::mpc::BR_STATUS], 0.0);
  EXPECT_TRUE(rc.warnings.empty());
}

TEST(ParseMatpower, CommentInsideMatrixIsTransparent) {
  std::string with_comment = replace(
      kCase3, "\t2\t1\t100", "% interior comment line\n\t2\t1\t100");
  auto a = gl::parse_matpower(kCase3);
  auto b = gl::parse_matpower(with_comment);
  EXPECT_EQ(a.bus_table, b.bus_table);
  EXPECT_EQ(a.branch_table, b.branch_table);
}

TEST(ParseMatpower, ScientificNotation) {
  std::string sci = replace(kCase3, "0.02\t0.2", "2e-2\t2.0E-1");
  auto rc = gl::parse_matpower(sci);
  EXPECT_EQ(rc.branch_table[0][gl::mpc::BR_R], 0.02);
  EXPECT_EQ(rc.branch_table[0][gl::mpc::BR_X], 0.2);
}

TEST(ParseMatpower, ReactiveGencostRowsIgnoredWithWarning) {
  std::string doubled = replace(kCase3,
                                "\t2\t0\t0\t2\t35\t0;",
                                "\t2\t0\t0\t2\t35\t0;\n"
                                "\t2\t0\t0\t2\t1\t0;\n"
                                "\t2\t0\t0\t2\t1\t0;");
  auto rc = gl::parse_matpower(doubled);
  ASSERT_EQ(rc.gencost_table.size(), 2u);
  ASSERT_EQ(rc.warnings.size(), 1u);
  EXPECT_NE(rc.warnings[0].find("reactive gencost"), std::string::npos);
}

TEST(ParseMatpower, ErrorPaths) {
  // Missing table.
  EXPECT_THROW(gl::parse_matpower(replace(kCase3, "mpc.gencost", "mpc.zencost")),
               gl::CaseError);
  // Non-numeric token inside a matrix.
  EXPECT_THROW(gl::parse_matpower(replace(kCase3, "0.02", "abc")),
               gl::CaseError);
  // Cost model outside {1, 2}.
  EXPECT_THROW(gl::parse_matpower(replace(kCase3, "2\t0\t0\t3\t0.01",
                                          "3\t0\t0\t3\t0.01")),
               gl::CaseError);
  // Polynomial degree above quadratic.
  EXPECT_THROW(gl::parse_matpower(replace(kCase3, "2\t0\t0\t3\t0.01\t40\t0;",
                                          "2\t0\t0\t4\t1\t0.01\t40\t0;")),
               gl::CaseError);
  // Gen referencing an unknown bus.
  EXPECT_THROW(gl::parse_matpower(replace(kCase3, "\t3\t0\t0\t50",
                                          "\t9\t0\t0\t50")),
               gl::CaseError);
  // Misaligned gencost (one row for two gens).
  EXPECT_THROW(gl::parse_matpower(replace(kCase3, "\t2\t0\t0\t2\t35\t0;", "")),
               gl::CaseError);
}

TEST(ToGrid, PerUnitConversionOracle) {
  auto g = gl::to_grid(gl::parse_matpower(kCase3));
  ASSERT_EQ(g.n_buses(), 3);
  EXPECT_EQ(g.reference_bus, 0);
  EXPECT_EQ(g.buses[0].orig_id, 1);
  EXPECT_NEAR(g.buses[1].shunt_b, 0.05, 1e-15);
  EXPECT_NEAR(g.buses[2].shunt_g, 0.02, 1e-15);
  // Fixed loads in per unit: Pd / base.
  ASSERT_EQ(g.loads.size(), 2u);
  EXPECT_EQ(g.loads[0].bus, 1);
  EXPECT_NEAR(g.loads[0].p_min, 1.0, 1e-15);
  EXPECT_NEAR(g.loads[0].p_max, 1.0, 1e-15);
  EXPECT_NEAR(g.loads[0].q_min, 0.3, 1e-15);
  EXPECT_NEAR(g.loads[1].p_max, 0.5, 1e-15);
  EXPECT_TRUE(g.loads[0].benefit.zero);
  // Generator limits in per unit.
  ASSERT_EQ(g.generators.size(), 2u);
  EXPECT_NEAR(g.generators[0].p_max, 2.5, 1e-15);
  EXPECT_NEAR(g.generators[0].p_min, 0.1, 1e-15);
  EXPECT_NEAR(g.generators[0].q_max, 1.5, 1e-15);
  EXPECT_NEAR(g.generators[0].q_min, -0.2, 1e-15);
}

TEST(ToGrid, StatusFilteringAndBranchFields) {
  auto g = gl::to_grid(gl::parse_matpower(kCase3));
  // Third branch is out of service.
  ASSERT_EQ(g.ac_branches.size(), 2u);
  const auto& b0 = g.ac_branches[0];
  EXPECT_EQ(b0.from, 0);
  EXPECT_EQ(b0.to, 1);
  EXPECT_EQ(b0.orig_id, 1);
  // RATE_A 130 MVA at base 100 -> current bound 1.3 p.u.
  EXPECT_NEAR(b0.i_max_from, 1.3, 1e-15);
  EXPECT_NEAR(b0.ang_hi, 30.0 * M_PI / 180.0, 1e-15);
  EXPECT_NEAR(b0.ang_lo, -30.0 * M_PI / 180.0, 1e-15);
  const auto& b1 = g.ac_branches[1];
  EXPECT_EQ(b1.orig_id, 2);  // original row index survives filtering
  EXPECT_EQ(b1.i_max_from, 1e4);  // zero rating means unlimited
  EXPECT_NEAR(b1.tap, 0.98, 1e-15);
  EXPECT_NEAR(b1.shift, 3.0 * M_PI / 180.0, 1e-15);
  // MATPOWER (0, 0) angle pair means unconstrained; capped below pi/2.
  EXPECT_NEAR(b1.ang_hi, M_PI_2 - 1e-3, 1e-15);
  EXPECT_NEAR(b1.ang_lo, -(M_PI_2 - 1e-3), 1e-15);
}

TEST(ToGrid, OutOfServiceGenDropped) {
  std::string off = replace(kCase3, "\t100\t1\t100\t0;", "\t100\t0\t100\t0;");
  auto g = gl::to_grid(gl::parse_matpower(off));
  ASSERT_EQ(g.generators.size(), 1u);
  EXPECT_EQ(g.generators[0].orig_id, 1);
}

// Quadratic gencost (c2, c1, c0) = (0.01, 40, 0) at base 100: marginal price
// at zero output must be 40 $/MWh, i.e. 4000 $/h per p.u.
TEST(ToGrid, QuadraticCostRescaleOracle) {
  auto g = gl::to_grid(gl::parse_matpower(kCase3));
  const auto& f = g.generators[0].cost;
  auto [lo, hi] = f.subdiff(0.0);
  EXPECT_NEAR(lo, 4000.0, 1e-9);
  EXPECT_NEAR(hi, 4000.0, 1e-9);
  // 50 MW output: 0.01 * 50^2 + 40 * 50 = 2025 $/h, evaluated at 0.5 p.u.
  EXPECT_NEAR(f.eval(0.5), 2025.0, 1e-9);
  // Linear cost on gen 2: 35 $/MWh.
  EXPECT_NEAR(g.generators[1].cost.eval(1.0), 3500.0, 1e-9);
}

TEST(ToGrid, PwlCostConvertedToPerUnit) {
  std::string pwl = replace(kCase3, "2\t0\t0\t3\t0.01\t40\t0;",
                            "1\t0\t0\t3\t0\t0\t100\t2000\t200\t6000;");
  auto g = gl::to_grid(gl::parse_matpower(pwl));
  const auto& f = g.generators[0].cost;
  ASSERT_EQ(f.kind, gl::CostFn::Kind::PiecewiseLinear);
  // Breakpoints 0/100/200 MW -> 0/1/2 p.u.; slopes 20 and 40 $/MWh.
  EXPECT_NEAR(f.eval(1.0), 2000.0, 1e-9);
  EXPECT_NEAR(f.eval(1.5), 4000.0, 1e-9);
  auto [lo, hi] = f.subdiff(1.0);
  EXPECT_NEAR(lo, 2000.0, 1e-9);
  EXPECT_NEAR(hi, 4000.0, 1e-9);
}

TEST(ToGrid, ScalingPowersScalesLoadsAndLimits) {
  auto rc = gl::parse_matpower(kCase3);
  auto scaled = rc;
  for (auto& row : scaled.bus_table) {
    row[gl::mpc::PD] *= 2.0;
    row[gl::mpc::QD] *= 2.0;
  }
  for (auto& row : scaled.gen_table) {
    row[gl::mpc::PMAX] *= 2.0;
    row[gl::mpc::PMIN] *= 2.0;
  }
  auto g = gl::to_grid(rc);
  auto h = gl::to_grid(scaled);
  for (size_t i = 0; i < g.loads.size(); ++i)
    EXPECT_NEAR(h.loads[i].p_max, 2.0 * g.loads[i].p_max, 1e-15);
  for (size_t i = 0; i < g.generators.size(); ++i)
    EXPECT_NEAR(h.generators[i].p_max, 2.0 * g.generators[i].p_max, 1e-15);
}

TEST(ToGrid, ErrorPaths) {
  // Negative series resistance.
  EXPECT_THROW(gl::to_grid(gl::parse_matpower(
                   replace(kCase3, "0.02\t0.2", "-0.02\t0.2"))),
               gl::CaseError);
  // Disabling branch 2-3 islands bus 3.
  EXPECT_THROW(gl::to_grid(gl::parse_matpower(
                   replace(kCase3, "0.98\t3\t1", "0.98\t3\t0"))),
               gl::CaseError);
  // Duplicate bus id (rewired so parse-time reference checks still pass).
  auto rc = gl::parse_matpower(kCase3);
  rc.bus_table[2][gl::mpc::BUS_I] = 2;
  rc.gen_table[1][gl::mpc::GEN_BUS] = 2;
  rc.branch_table[1][gl::mpc::T_BUS] = 2;
  EXPECT_THROW(gl::to_grid(rc), gl::CaseError);
}

TEST(Json, EmptyDcSetEmitted) {
  std::mt19937 rng(3);
  auto g = gl::testutil::make_random_grid(rng, 3);
  auto text = gl::emit_json(g);
  EXPECT_NE(text.find("\"dc_branches\": []"), std::string::npos);
  EXPECT_NE(text.find("\"schema\": 1"), std::string::npos);
}

TEST(Json, RoundTripRandomGrids) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = gl::testutil::make_random_grid(rng, 3 + trial % 5);
    // Decorate with devices so every field class is exercised.
    gl::GenSpec gen;
    gen.bus = 0;
    gen.p_max = 2.0;
    gen.q_min = -1.0;
    gen.q_max = 1.0;
    gen.cost = trial % 2 ? gl::CostFn::quadratic(1.0, 30.0, 2.0)
                         : gl::CostFn::pwl({0, 1, 2}, {0, 25, 60});
    if (trial % 3 == 0)
      gen.polygon = {{0, -1}, {2, -1}, {2, 1}, {0, 1}};
    g.generators.push_back(gen);
    gl::LoadSpec load;
    load.bus = 1;
    load.p_max = 1.5;
    load.q_min = -0.3;
    load.q_max = 0.3;
    if (trial % 2) {
      load.benefit = gl::BenefitFn::pwl({0, 1, 1.5}, {0, 40, 50});
    }
    g.loads.push_back(load);
    if (trial % 4 == 0) {
      gl::DcBranch d;
      d.from = 0;
      d.to = 2;
      d.p_min = -1.5;
      d.p_max = 1.5;
      d.loss_factor = 0.035;
      d.q_capability = 0.4;
      d.orig_id = 7;
      g.dc_branches.push_back(d);
    }
    auto back = gl::parse_json(gl::emit_json(g));
    expect_grid_eq(g, back);
  }
}

TEST(Json, MatpowerImportRoundTrips) {
  auto g = gl::to_grid(gl::parse_matpower(kCase3));
  auto back = gl::parse_json(gl::emit_json(g));
  expect_grid_eq(g, back);
}

TEST(Json, SchemaVersionChecked) {
  std::mt19937 rng(4);
  auto text = gl::emit_json(gl::testutil::make_random_grid(rng, 3));
  EXPECT_THROW(gl::parse_json(replace(text, "\"schema\": 1", "\"schema\": 2")),
               gl::CaseError);
  EXPECT_THROW(gl::parse_json("{\"base_mva\": 100}"), gl::CaseError);
}

TEST(Json, UnknownFieldIgnoredWithWarning) {
  std::mt19937 rng(6);
  auto g = gl::testutil::make_random_grid(rng, 3);
  auto text = replace(gl::emit_json(g), "\"schema\": 1",
                      "\"schema\": 1, \"frequency_hz\": 60");
  std::vector<std::string> warnings;
  auto back = gl::parse_json(text, &warnings);
  expect_grid_eq(g, back);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("frequency_hz"), std::string::npos);
}
