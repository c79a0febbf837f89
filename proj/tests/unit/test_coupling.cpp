#include "mrcouple/coupling.hpp"
#include "mrcouple/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace mrcouple;

namespace {

Eigen::Matrix2d conservative_b() {
    Eigen::Matrix2d B;
    B << 1, -1, -1, 1;
    return B;
}

Eigen::MatrixXd random_spd(std::mt19937& rng, int n, double shift) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = nd(rng);
    return A * A.transpose() + shift * Eigen::MatrixXd::Identity(n, n);
}

// Small matrix-defined problem with two interface unknowns.
FeOperators small_problem(std::mt19937& rng, const Eigen::Matrix2d& B, int d = 4) {
    const Eigen::MatrixXd M = random_spd(rng, d, 1.0), L = random_spd(rng, d, 0.5);
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(2, d);
    T(0, 0) = T(1, d - 1) = 1.0;
    FeOperators ops = from_matrices(M, L, T, M, L, T, random_spd(rng, 2, 1.0), B);
    ops.sub[0].initial = Eigen::VectorXd::LinSpaced(d, 1.0, 2.0);
    ops.sub[1].initial = Eigen::VectorXd::LinSpaced(d, -1.0, 0.5);
    return ops;
}

WindowConfig window_config(double t_f, int N, int M1, int M2, int r1, int r2) {
    WindowConfig c;
    c.t_f = t_f;
    c.N = N;
    c.M = {M1, M2};
    c.r = {r1, r2};
    return c;
}

TimePoly random_poly(std::mt19937& rng, const Interval& I, int order, int dim) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd c(order + 1, dim);
    for (int i = 0; i < c.size(); ++i) c.data()[i] = nd(rng);
    return {I, c};
}

}  // namespace

TEST(WindowConfigTest, ClockAndValidation) {
    const WindowConfig c = window_config(1.0, 4, 2, 3, 1, 1);
    EXPECT_DOUBLE_EQ(c.dt(), 0.25);
    EXPECT_DOUBLE_EQ(c.dt_sub(1), 0.25 / 3);
    EXPECT_DOUBLE_EQ(c.window(2).a(), 0.25);
    EXPECT_DOUBLE_EQ(c.substep(1, 4, 3).b(), 1.0);
    EXPECT_THROW(c.window(5), StructuralError);
    WindowConfig bad = c;
    bad.M[0] = 0;
    EXPECT_THROW(bad.validate(), StructuralError);
}

TEST(TraceProjection, SingleSubstepIdentity) {
    std::mt19937 rng(1);
    const Interval W(0.0, 0.5);
    const TimePoly v = random_poly(rng, W, 1, 3);
    const TimePoly p = trace_projection(std::span<const TimePoly>(&v, 1), W, 1);
    EXPECT_LT((p.coeffs() - v.coeffs()).norm(), 1e-14);
}

TEST(TraceProjection, AverageOfConstants) {
    const Interval W(0.0, 1.0);
    const std::vector<TimePoly> tr{TimePoly::constant(Interval(0, 0.5), Eigen::VectorXd::Constant(1, 2.0)),
                                   TimePoly::constant(Interval(0.5, 1), Eigen::VectorXd::Constant(1, 4.0))};
    EXPECT_NEAR(trace_projection(tr, W, 0).coeffs()(0, 0), 3.0, 1e-14);
    EXPECT_NEAR(trace_projection(tr, W, 0, TimeQuadrature::trapezoid).coeffs()(0, 0), 3.0, 1e-14);
}

TEST(TraceProjection, TrapezoidMatchesMidpointLeastSquares) {
    std::mt19937 rng(21);
    const Interval W(0.3, 0.9);
    for (int M : {1, 2, 3, 5}) {
        std::vector<TimePoly> tr;
        for (int n = 0; n < M; ++n) {
            tr.push_back(random_poly(rng, Interval(W.a() + W.length() * n / M, W.a() + W.length() * (n + 1) / M), 1, 2));
        }
        const TimePoly p = trace_projection(tr, W, 1, TimeQuadrature::trapezoid);
        // Midpoint-sampled normal equations with monomials in t.
        Eigen::Matrix2d G;
        G << W.length(), (W.b() * W.b() - W.a() * W.a()) / 2, (W.b() * W.b() - W.a() * W.a()) / 2,
            (std::pow(W.b(), 3) - std::pow(W.a(), 3)) / 3;
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(2, 2);
        for (const auto& piece : tr) {
            const double tm = piece.interval().midpoint(), dt = piece.interval().length();
            rhs.row(0) += dt * piece(tm).transpose();
            rhs.row(1) += dt * tm * piece(tm).transpose();
        }
        const Eigen::MatrixXd c = G.lu().solve(rhs);
        for (double t : {W.a(), 0.5, W.b()}) {
            const Eigen::VectorXd ref = c.row(0).transpose() + t * c.row(1).transpose();
            EXPECT_LT((p(t) - ref).norm(), 1e-11) << "M=" << M;
        }
    }
}

TEST(FluxSolve, EqualTracesGiveZeroFlux) {
    const Interval W(0, 1);
    InterfaceData data;
    data.coupling = conservative_b();
    data.interface_mass = Eigen::MatrixXd::Identity(2, 2).sparseView();
    const TimePoly u = TimePoly::constant(W, Eigen::Vector2d(0.7, -1.3));
    const auto F = flux_solve(u, u, data, {1, 1});
    EXPECT_LT(F[0].coeffs().norm(), 1e-15);
    EXPECT_LT(F[1].coeffs().norm(), 1e-15);
}

TEST(FluxSolve, StrongAndWeakConservation) {
    std::mt19937 rng(5);
    const Interval W(0, 1);
    InterfaceData data;
    data.coupling << 2.0, -0.5, -2.0, 0.5;
    data.interface_mass = Eigen::MatrixXd::Identity(3, 3).sparseView();
    const TimePoly u1 = random_poly(rng, W, 1, 3), u2 = random_poly(rng, W, 1, 3);
    const auto F = flux_solve(u1, u2, data, {1, 1});
    const double scale = std::max(F[0].coeffs().cwiseAbs().maxCoeff(), 1.0);
    EXPECT_LE((F[0].coeffs() + F[1].coeffs()).cwiseAbs().maxCoeff(), 1e-12 * scale);

    const auto G = flux_solve(u1, u2.with_order(0), data, {1, 0});
    EXPECT_EQ(G[1].order(), 0);
    EXPECT_LE((G[0].coeffs().row(0) + G[1].coeffs().row(0)).cwiseAbs().maxCoeff(), 1e-12 * scale);
}

TEST(WindowSystemTest, ToyDimension) {
    const FeOperators ops = scalar_toy(conservative_b());
    WindowSystem sys(ops, schemes::crank_nicolson(), window_config(1.0, 4, 1, 2, 1, 1));
    // (q + 2) d per substep, M_1 + M_2 substeps, (r_i + 1) d_Gamma flux modes per side.
    EXPECT_EQ(sys.size(), 3 * (1 + 2) + 2 * 2 * 1);
    EXPECT_EQ(sys.substep_unknowns(), 9);
    EXPECT_EQ(sys.flux_offset(1), 11);
}

TEST(WindowSystemTest, DecoupledMatchesIndependentRuns) {
    std::mt19937 rng(3);
    const FeOperators ops = small_problem(rng, Eigen::Matrix2d::Zero());
    const WindowConfig cfg = window_config(0.6, 3, 2, 3, 1, 1);
    const Trajectory traj = run_simulation(ops, schemes::crank_nicolson(), cfg);
    for (int i = 0; i < 2; ++i) {
        Eigen::VectorXd U = ops.sub[i].initial;
        for (int w = 1; w <= cfg.N; ++w) {
            for (int n = 1; n <= cfg.M[i]; ++n) {
                const Interval I = cfg.substep(i, w, n);
                U = cn_substep(ops.sub[i], ops.interface_mass, I, TimePoly::zero(I, 0, 2), U);
                EXPECT_LT((traj.windows[w - 1].sides[i][n] - U).norm(), 1e-12 * U.norm());
            }
        }
    }
}

TEST(WindowSystemTest, AntisymmetricDataStaysAntisymmetric) {
    std::mt19937 rng(13);
    FeOperators ops = small_problem(rng, conservative_b());
    ops.sub[1].initial = -ops.sub[0].initial;
    const WindowConfig cfg = window_config(0.5, 4, 2, 2, 1, 1);
    const Trajectory traj = run_simulation(ops, schemes::crank_nicolson(), cfg);
    for (const auto& w : traj.windows) {
        for (std::size_t n = 0; n < w.sides[0].size(); ++n) {
            EXPECT_LT((w.sides[0][n] + w.sides[1][n]).norm(), 1e-13);
        }
        for (std::size_t n = 0; n < w.substeps[0].size(); ++n) {
            EXPECT_LT((w.substeps[0][n].coeffs() + w.substeps[1][n].coeffs()).norm(), 1e-13);
        }
    }
}

TEST(FixedPoint, DecoupledConvergesImmediately) {
    FeOperators ops = scalar_toy(Eigen::Matrix2d::Zero(), 0.0, 0.0);
    ops.sub[0].initial = Eigen::VectorXd::Constant(1, 1.0);
    ops.sub[1].initial = Eigen::VectorXd::Constant(1, 2.0);
    WindowSystem sys(ops, schemes::crank_nicolson(), window_config(1.0, 2, 1, 2, 1, 1));
    const History in{std::vector<Eigen::VectorXd>{ops.sub[0].initial}, std::vector<Eigen::VectorXd>{ops.sub[1].initial}};
    sys.assemble(1, in);
    const WindowSolution s = solve_window_fixed_point(sys, in, 1e-12);
    EXPECT_LE(s.diagnostics.iterations, 2);
}

TEST(FixedPoint, MatchesDirectWithinRestriction) {
    FeOperators ops = scalar_toy(conservative_b());
    ops.sub[0].initial = Eigen::VectorXd::Constant(1, 1.0);
    ops.sub[1].initial = Eigen::VectorXd::Constant(1, -0.5);
    const WindowConfig cfg = window_config(0.1, 10, 1, 2, 1, 1);
    EXPECT_LT(step_restriction_ratio(cfg, 1.0), 0.1);
    WindowSystem sys(ops, schemes::crank_nicolson(), cfg);
    const History in{std::vector<Eigen::VectorXd>{ops.sub[0].initial}, std::vector<Eigen::VectorXd>{ops.sub[1].initial}};
    sys.assemble(1, in);
    const double tol = 1e-10;
    const WindowSolution fp = solve_window_fixed_point(sys, in, tol);
    const WindowSolution dir = solve_window_direct(sys, in);
    EXPECT_LE(fp.diagnostics.iterations, 50);
    for (int i = 0; i < 2; ++i) {
        for (std::size_t n = 0; n < dir.sides[i].size(); ++n) {
            EXPECT_LT((fp.sides[i][n] - dir.sides[i][n]).norm(), 10 * tol);
        }
    }
}

TEST(FixedPoint, ViolatedRestrictionRaises) {
    FeOperators ops = scalar_toy(conservative_b());
    ops.sub[0].initial = Eigen::VectorXd::Constant(1, 1.0);
    ops.sub[1].initial = Eigen::VectorXd::Constant(1, -0.5);
    const WindowConfig cfg = window_config(50.0, 1, 1, 2, 1, 1);
    EXPECT_GE(step_restriction_ratio(cfg, 1.0), 100.0);
    WindowSystem sys(ops, schemes::crank_nicolson(), cfg);
    const History in{std::vector<Eigen::VectorXd>{ops.sub[0].initial}, std::vector<Eigen::VectorXd>{ops.sub[1].initial}};
    sys.assemble(1, in);
    try {
        solve_window_fixed_point(sys, in, 1e-10, 200);
        FAIL() << "expected ContractionError";
    } catch (const ContractionError& e) {
        EXPECT_GE(e.contraction_factor(), 1.0);
        EXPECT_GE(e.step_restriction_ratio(), 100.0);
    }
}

TEST(StepRestriction, Formula) {
    const WindowConfig c = window_config(0.01, 1, 1, 1, 1, 1);
    EXPECT_NEAR(step_restriction_ratio(c, 1.0), 0.02, 1e-15);
    EXPECT_NEAR(step_restriction_ratio(c, 0.1), 1.1, 1e-13);
    double prev = 0.0;
    for (int N : {64, 32, 16, 8, 4}) {
        const double r = step_restriction_ratio(window_config(1.0, N, 1, 1, 1, 1), 0.25);
        EXPECT_GT(r, prev);
        prev = r;
    }
}

TEST(Conservation, StrongWeakAndPrecondition) {
    std::mt19937 rng(17);
    const FeOperators ops = small_problem(rng, conservative_b());
    const WindowConfig same = window_config(0.4, 2, 2, 3, 1, 1);
    const Trajectory t1 = run_simulation(ops, schemes::crank_nicolson(), same);
    for (const auto& w : t1.windows) {
        EXPECT_LE(check_flux_conservation(w, same, ConservationMode::strong, ops).relative, 1e-12);
    }
    const WindowConfig mixed = window_config(0.4, 2, 2, 3, 0, 1);
    const Trajectory t2 = run_simulation(ops, schemes::crank_nicolson(), mixed);
    for (const auto& w : t2.windows) {
        EXPECT_LE(check_flux_conservation(w, mixed, ConservationMode::weak, ops).relative, 1e-12);
        EXPECT_GT(check_flux_conservation(w, mixed, ConservationMode::strong, ops).relative, 1e-6);
    }
    Eigen::Matrix2d B;
    B << 1, 0, 1, 0;
    std::mt19937 rng2(17);
    const FeOperators bad = small_problem(rng2, B);
    EXPECT_THROW(check_flux_conservation(t1.windows[0], same, ConservationMode::strong, bad), PreconditionError);
}

TEST(InterfacialEnergy, Signs) {
    Eigen::Matrix2d skew;
    skew << 0, 1, -1, 0;
    const std::vector<Eigen::Matrix2d> presets{conservative_b(), Eigen::Matrix2d::Identity(), skew};
    for (const Eigen::Matrix2d& B : presets) {
        std::mt19937 rng(23);
        const FeOperators ops = small_problem(rng, B);
        const WindowConfig cfg = window_config(0.3, 3, 2, 3, 1, 0);
        const Trajectory traj = run_simulation(ops, schemes::crank_nicolson(), cfg);
        for (const auto& w : traj.windows) {
            const double e = interfacial_energy_term(w, ops, EnergyMode::exact);
            if (B == skew) {
                EXPECT_NEAR(e, 0.0, 1e-13);
            } else {
                EXPECT_LE(e, 1e-14);
            }
        }
    }
    std::mt19937 rng(23);
    const FeOperators neg = small_problem(rng, -Eigen::Matrix2d::Identity());
    const Trajectory traj = run_simulation(neg, schemes::crank_nicolson(), window_config(0.1, 1, 1, 1, 1, 1));
    EXPECT_THROW(interfacial_energy_term(traj.windows[0], neg, EnergyMode::exact), PreconditionError);
}

TEST(RunSimulation, RecordsAndCsv) {
    std::mt19937 rng(29);
    const FeOperators ops = small_problem(rng, conservative_b());
    const WindowConfig cfg = window_config(0.2, 4, 1, 2, 1, 1);
    const Trajectory traj = run_simulation(ops, schemes::crank_nicolson(), cfg);
    ASSERT_EQ(traj.records.size(), 5u);
    EXPECT_EQ(traj.records[0].window, 0);
    EXPECT_TRUE(std::isnan(traj.records[0].flux_conservation_residual));
    EXPECT_NEAR(traj.records[4].t_sync, 0.2, 1e-15);
    std::ostringstream os;
    traj.write_csv(os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "window,t_sync,energy_1,energy_2,flux_conservation_residual,interfacial_energy_term");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 5);
}

TEST(RunSimulation, ErrorsCarryWindowIndex) {
    std::mt19937 rng(31);
    const FeOperators ops = small_problem(rng, conservative_b());
    WindowConfig cfg = window_config(0.2, 4, 1, 2, 1, 1);
    cfg.N0 = 2;
    try {
        run_simulation(ops, schemes::crank_nicolson(), cfg);
        FAIL() << "expected PreconditionError";
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("window 1"), std::string::npos);
    }
}
