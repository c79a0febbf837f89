#include "mrcouple/error.hpp"
#include "mrcouple/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace mrcouple;

namespace {

Eigen::Matrix2d conservative_b() {
    Eigen::Matrix2d B;
    B << 1, -1, -1, 1;
    return B;
}

WindowConfig window_config(double t_f, int N, int M1, int M2, int r1, int r2) {
    WindowConfig c;
    c.t_f = t_f;
    c.N = N;
    c.M = {M1, M2};
    c.r = {r1, r2};
    return c;
}

FeOperators decay_toy() {
    FeOperators ops = scalar_toy(Eigen::Matrix2d::Zero());
    ops.sub[0].initial = Eigen::VectorXd::Constant(1, 1.0);
    ops.sub[1].initial = Eigen::VectorXd::Constant(1, 2.0);
    return ops;
}

ProblemSpec base_spec() {
    ProblemSpec s;
    s.coupling = conservative_b();
    return s;
}

}  // namespace

TEST(Manufactured, ResidualsAndPresets) {
    for (const char* name : {"smooth", "poly1", "poly2", "antisymmetric"}) {
        const ManufacturedCase c = manufactured_case(name, base_spec());
        EXPECT_LE(c.residual, 1e-10) << name;
        EXPECT_EQ(c.conservation_compatible(), std::string(name) == "antisymmetric") << name;
    }
    EXPECT_EQ(manufactured_case("poly1", base_spec()).temporal_degree(), 1);
    EXPECT_EQ(manufactured_case("poly2", base_spec()).temporal_degree(), 2);
    EXPECT_EQ(manufactured_case("smooth", base_spec()).temporal_degree(), -1);
    EXPECT_THROW(manufactured_case("nope", base_spec()), StructuralError);
}

TEST(Manufactured, SolutionSatisfiesInterfaceContinuity) {
    const ManufacturedCase c = manufactured_case("smooth", base_spec());
    for (double x : {0.2, 0.7}) {
        EXPECT_NEAR(c.solution.value(0, x, 0.0, 0.4), c.solution.value(1, x, 0.0, 0.4), 1e-15);
    }
    EXPECT_NEAR(c.solution.value(0, 0.3, 1.0, 0.2), 0.0, 1e-14);
    EXPECT_NEAR(c.solution.value(1, 0.3, -1.0, 0.2), 0.0, 1e-14);
}

TEST(ReferenceSolve, ToyExponential) {
    const FeOperators ops = decay_toy();
    for (ReferenceMethod m : {ReferenceMethod::radau_iia, ReferenceMethod::crank_nicolson}) {
        const ReferenceTrajectory ref = reference_solve(ops, 1.0, m);
        EXPECT_NEAR(ref.subdomain(0, 1.0)(0), std::exp(-1.0), 1e-8);
        EXPECT_NEAR(ref.subdomain(1, 1.0)(0), 2.0 * std::exp(-1.0), 1e-8);
        EXPECT_NEAR(ref.subdomain(0, 0.37)(0), std::exp(-0.37), 1e-8);
    }
}

TEST(ReferenceSolve, SteadyStateIsConstant) {
    FeOperators ops = scalar_toy(Eigen::Matrix2d::Zero());
    for (int i = 0; i < 2; ++i) {
        ops.sub[i].initial = Eigen::VectorXd::Constant(1, 3.0);
        ops.sub[i].body_load = [](double) { return Eigen::VectorXd::Constant(1, 3.0); };
    }
    const ReferenceTrajectory ref = reference_solve(ops, 2.0);
    for (double t : {0.0, 0.3, 1.1, 2.0}) EXPECT_NEAR(ref(t)(0), 3.0, 1e-13);
}

TEST(ReferenceSolve, DriftSmall) {
    const ManufacturedProblem mp = build_manufactured_problem("smooth", base_spec(), 4, 4, true);
    EXPECT_LT(reference_drift(mp.ops, 1.0, ReferenceMethod::radau_iia), 1e-9);
    EXPECT_LT(reference_drift(mp.ops, 1.0, ReferenceMethod::crank_nicolson), 1e-6);
}

TEST(ErrorNorms, OracleSamplesAndPerturbation) {
    const ManufacturedProblem mp = build_manufactured_problem("smooth", base_spec(), 4, 4, true);
    const ReferenceTrajectory ref = reference_solve(mp.ops, 0.5);
    WindowConfig cfg = window_config(0.5, 4, 1, 2, 1, 1);
    cfg.N0 = cfg.N + 1;  // every window is filled from the oracle
    SimulationOptions opt;
    opt.initializer = [&](int i, double t) { return ref.subdomain(i, t); };
    Trajectory traj = run_simulation(mp.ops, schemes::crank_nicolson(), cfg, opt);
    const ErrorReport clean = error_norms(traj, ref, mp.ops);
    for (int i = 0; i < 2; ++i) {
        EXPECT_LT(clean.nodal[i], 1e-14);
        EXPECT_LT(clean.l2[i], 1e-3);  // projection error of an order-1 fit only
    }
    EXPECT_LT(clean.sync_max(), 1e-14);

    const double total = clean.l2[0] * clean.l2[0] + clean.l2[1] * clean.l2[1];
    const double sum = std::accumulate(clean.window_squares.begin(), clean.window_squares.end(), 0.0);
    EXPECT_NEAR(sum, total, 1e-12 * std::max(total, 1e-300));

    // Unit M-norm perturbation of one side value.
    const SparseMatrix& M = mp.ops.sub[1].mass;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(M.rows());
    v(0) = 1.0 / std::sqrt(M.coeff(0, 0));
    const double eps = 1e-5;
    traj.windows[2].sides[1][1] += eps * v;
    const ErrorReport pert = error_norms(traj, ref, mp.ops);
    EXPECT_NEAR(pert.nodal[1], eps, 1e-13);
    EXPECT_LT(pert.nodal[0], 1e-14);
}

TEST(ConvergenceStudy, PolynomialExactnessAtRoundoff) {
    ProblemSpec spec = base_spec();
    const ManufacturedProblem mp = build_manufactured_problem("poly1", spec, 4, 4);
    const ReferenceTrajectory ref = reference_solve(mp.ops, 1.0);
    const RateTable t = convergence_study(mp.ops, schemes::crank_nicolson(), window_config(1.0, 2, 1, 2, 1, 1), 3,
                                          ErrorTarget::l2, ref);
    ASSERT_EQ(t.rows.size(), 3u);
    for (const auto& r : t.rows) {
        EXPECT_LT(r.err_l2_u1, 1e-11);
        EXPECT_LT(r.err_l2_u2, 1e-11);
        EXPECT_LT(r.err_sync, 1e-11);
    }
}

TEST(ConvergenceStudy, OracleIndependence) {
    const ManufacturedProblem mp = build_manufactured_problem("smooth", base_spec(), 4, 4, true);
    const WindowConfig base = window_config(1.0, 8, 1, 2, 1, 1);
    SimulationOptions opt;
    opt.quadrature = QuadratureFlags::crank_nicolson_classical();
    const ReferenceTrajectory radau = reference_solve(mp.ops, 1.0, ReferenceMethod::radau_iia);
    const ReferenceTrajectory cn = reference_solve(mp.ops, 1.0, ReferenceMethod::crank_nicolson);
    const RateTable a = convergence_study(mp.ops, schemes::crank_nicolson(), base, 3, ErrorTarget::l2, radau, opt);
    const RateTable b = convergence_study(mp.ops, schemes::crank_nicolson(), base, 3, ErrorTarget::l2, cn, opt, 2);
    EXPECT_LT(std::abs(a.rate - b.rate), 0.1);
    EXPECT_GT(a.rate, 1.5);

    std::ostringstream os;
    a.write_csv(os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "level,dt,dt1,dt2,err_l2_u1,err_l2_u2,err_sync,rate_running");
}

TEST(ConvergenceStudy, RejectsTooFewLevels) {
    const FeOperators ops = decay_toy();
    const ReferenceTrajectory ref = reference_solve(ops, 1.0);
    EXPECT_THROW(convergence_study(ops, schemes::crank_nicolson(), window_config(1.0, 2, 1, 1, 1, 1), 2,
                                   ErrorTarget::l2, ref),
                 StructuralError);
}

TEST(FittedRate, PowerLaw) {
    const std::vector<double> dt{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> err;
    for (double h : dt) err.push_back(3.0 * h * h);
    EXPECT_NEAR(fitted_rate(dt, err), 2.0, 1e-12);
}

TEST(EnergyReportTest, ZeroAndPsdAndSignFlip) {
    FeOperators zero = scalar_toy(conservative_b());
    const Trajectory tz = run_simulation(zero, schemes::crank_nicolson(), window_config(1.0, 5, 1, 2, 1, 1));
    const EnergyReport ez = energy_report(tz);
    EXPECT_TRUE(ez.monotone);
    for (double e : ez.energies) EXPECT_EQ(e, 0.0);

    const ManufacturedProblem mp = build_manufactured_problem("smooth", base_spec(), 4, 4);
    FeOperators diff = mp.ops;
    for (int i = 0; i < 2; ++i) diff.sub[i].body_load = nullptr;
    diff.interface_load = {};
    diff.interface_forcing = InterfaceForcing::zero;
    const Trajectory td = run_simulation(diff, schemes::crank_nicolson(), window_config(0.5, 10, 2, 3, 1, 1));
    EXPECT_TRUE(energy_report(td).monotone);

    FeOperators flipped = diff;
    flipped.coupling = -Eigen::Matrix2d::Identity();
    const Trajectory tf = run_simulation(flipped, schemes::crank_nicolson(), window_config(0.5, 10, 2, 3, 1, 1));
    const EnergyReport ef = energy_report(tf);
    RecordProperty("sign_flipped_monotone", ef.monotone ? "true" : "false");
    EXPECT_EQ(ef.energies.size(), 11u);
}
