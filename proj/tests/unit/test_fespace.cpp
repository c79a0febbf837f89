#include "mrcouple/error.hpp"
#include "mrcouple/fespace.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace mrcouple;

namespace {

struct Built {
    Mesh m1, m2;
    InterfaceMap map;
    FeOperators ops;
};

Built build(int nx, int ny, const ProblemSpec& spec = {}) {
    Built b{build_mesh(1, nx, ny), build_mesh(2, nx, ny), {}, {}};
    b.map = match_interfaces(b.m1, b.m2);
    b.ops = assemble(b.m1, b.m2, b.map, spec);
    return b;
}

// Tensor hat function of a mesh node, evaluated directly.
double hat(const Mesh& m, int node, double x, double y) {
    const double hx = 1.0 / m.nx, hy = 1.0 / m.ny;
    const auto& p = m.nodes[node];
    return std::max(0.0, 1.0 - std::abs(x - p[0]) / hx) * std::max(0.0, 1.0 - std::abs(y - p[1]) / hy);
}

}  // namespace

TEST(Assemble, NoFreeDofs) {
    const Built b = build(1, 1);
    EXPECT_EQ(b.ops.sub[0].dofs(), 0);
    EXPECT_EQ(b.ops.sub[1].dofs(), 0);
    EXPECT_EQ(b.ops.interface_dofs(), 0);
}

TEST(Assemble, MassMatchesDenseQuadrature) {
    const Built b = build(2, 2);
    for (int i = 0; i < 2; ++i) {
        const Mesh& m = i == 0 ? b.m1 : b.m2;
        const double y0 = i == 0 ? 0.0 : -1.0;
        // Composite 2x2 Gauss on a 100x100 grid aligned with the element edges.
        const int n = 100;
        const double g = 0.5 / std::sqrt(3.0);
        Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(m.dof_count(), m.dof_count());
        for (int cx = 0; cx < n; ++cx) {
            for (int cy = 0; cy < n; ++cy) {
                for (double sx : {-g, g}) {
                    for (double sy : {-g, g}) {
                        const double x = (cx + 0.5 + sx) / n, y = y0 + (cy + 0.5 + sy) / n;
                        const double w = 0.25 / (n * n);
                        for (int a = 0; a < m.dof_count(); ++a) {
                            for (int c = 0; c < m.dof_count(); ++c) {
                                oracle(a, c) += w * hat(m, m.node_of_dof[a], x, y) * hat(m, m.node_of_dof[c], x, y);
                            }
                        }
                    }
                }
            }
        }
        const Eigen::MatrixXd M(b.ops.sub[i].mass);
        EXPECT_LT((M - oracle).norm(), 1e-14);
        EXPECT_NEAR(M.sum(), oracle.sum(), 1e-14);
    }
}

TEST(Assemble, DiffusionSymmetricPositive) {
    ProblemSpec spec;
    spec.nu = {0.5, 2.0};
    const Built b = build(4, 3, spec);
    for (int i = 0; i < 2; ++i) {
        const Eigen::MatrixXd A(b.ops.sub[i].diffusion);
        EXPECT_LT((A - A.transpose()).norm(), 1e-14);
        EXPECT_GT(A.selfadjointView<Eigen::Lower>().llt().matrixL().determinant(), 0.0);
        EXPECT_TRUE(is_spd(b.ops.sub[i].mass));
    }
    // Constants are not in the kernel once the Dirichlet sides are removed.
    const Eigen::MatrixXd A0(b.ops.sub[0].diffusion);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(A0.rows());
    EXPECT_GT(ones.dot(A0 * ones), 0.0);
}

TEST(Assemble, InterfaceMassAndTrace) {
    const Built b = build(4, 2);
    const Eigen::MatrixXd Mg(b.ops.interface_mass);
    ASSERT_EQ(Mg.rows(), 3);
    const double h = 0.25;
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(Mg(k, k), 2 * h / 3, 1e-15);
        if (k + 1 < 3) EXPECT_NEAR(Mg(k, k + 1), h / 6, 1e-15);
    }
    for (int i = 0; i < 2; ++i) {
        const Eigen::MatrixXd T(b.ops.sub[i].trace);
        EXPECT_EQ(T.rows(), 3);
        EXPECT_EQ(T.cols(), b.ops.sub[i].dofs());
        for (int k = 0; k < 3; ++k) {
            EXPECT_EQ(T.row(k).sum(), 1.0);
            EXPECT_EQ(T(k, b.map.dof_of_slot[i][k]), 1.0);
        }
    }
}

TEST(Assemble, RejectsNonPositiveViscosity) {
    ProblemSpec spec;
    spec.nu = {1.0, 0.0};
    const Mesh m1 = build_mesh(1, 2, 2), m2 = build_mesh(2, 2, 2);
    EXPECT_THROW(assemble(m1, m2, match_interfaces(m1, m2), spec), StructuralError);
}

TEST(Assemble, InitialProjectionReproducesDiscreteField) {
    const Mesh m = build_mesh(1, 3, 3);
    ProblemSpec q;
    q.initial[0] = [&m](double x, double y) {
        double v = 0.0;
        for (int d = 0; d < m.dof_count(); ++d) v += (d + 1) * hat(m, m.node_of_dof[d], x, y);
        return v;
    };
    const Built e = build(3, 3, q);
    for (int d = 0; d < m.dof_count(); ++d) EXPECT_NEAR(e.ops.sub[0].initial(d), d + 1.0, 1e-12);
}

TEST(FromMatrices, ScalarToy) {
    Eigen::Matrix2d B;
    B << 1, -1, -1, 1;
    const FeOperators ops = scalar_toy(B);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(ops.sub[i].dofs(), 1);
        EXPECT_EQ(ops.sub[i].mass.coeff(0, 0), 1.0);
        EXPECT_EQ(ops.sub[i].op.coeff(0, 0), 1.0);
        EXPECT_EQ(ops.sub[i].trace.coeff(0, 0), 1.0);
    }
    EXPECT_EQ(ops.interface_dofs(), 1);
    EXPECT_TRUE(ops.conservation_compatible());
    EXPECT_TRUE(ops.coupling_psd());
}

TEST(FromMatrices, RejectsNonSpdMass) {
    Eigen::MatrixXd M(2, 2), L = Eigen::MatrixXd::Identity(2, 2), T(1, 2), Mg(1, 1);
    M << 1, 2, 2, 1;
    T << 1, 0;
    Mg << 1;
    EXPECT_THROW(from_matrices(M, L, T, L, L, T, Mg, Eigen::Matrix2d::Identity()), StructuralError);
    EXPECT_THROW(from_matrices(L, L, T, L, L, T, -Mg, Eigen::Matrix2d::Identity()), StructuralError);
}

TEST(FromMatrices, MatchesAssembledOperators) {
    const Built b = build(2, 2);
    const auto& s = b.ops.sub;
    const FeOperators ops = from_matrices(s[0].mass, s[0].op, s[0].trace, s[1].mass, s[1].op, s[1].trace,
                                          b.ops.interface_mass, b.ops.coupling);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ((Eigen::MatrixXd(ops.sub[i].mass) - Eigen::MatrixXd(s[i].mass)).norm(), 0.0);
        EXPECT_EQ((Eigen::MatrixXd(ops.sub[i].op) - Eigen::MatrixXd(s[i].op)).norm(), 0.0);
        EXPECT_EQ((Eigen::MatrixXd(ops.sub[i].trace) - Eigen::MatrixXd(s[i].trace)).norm(), 0.0);
    }
    EXPECT_EQ((Eigen::MatrixXd(ops.interface_mass) - Eigen::MatrixXd(b.ops.interface_mass)).norm(), 0.0);
}

TEST(Coercivity, Probe) {
    const Built diff = build(6, 6);
    const double c0 = coercivity_probe(diff.ops);
    EXPECT_GT(c0, 0.0);

    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(2, 2), I = Eigen::MatrixXd::Identity(2, 2), T(1, 2), Mg(1, 1);
    T << 1, 0;
    Mg << 1;
    EXPECT_EQ(coercivity_probe(from_matrices(I, Z, T, I, Z, T, Mg, Eigen::Matrix2d::Zero())), 0.0);

    ProblemSpec spec;
    spec.advection = {AdvectionPreset::vortex(3.0), AdvectionPreset::vortex(3.0)};
    const Built adv = build(6, 6, spec);
    EXPECT_NEAR(coercivity_probe(adv.ops), c0, 1e-8);
    const Eigen::MatrixXd A(adv.ops.sub[0].advection);
    EXPECT_LT((A + A.transpose()).norm(), 1e-12 * std::max(1.0, A.norm()));
}

TEST(Advection, Presets) {
    const AdvectionPreset v = AdvectionPreset::vortex(2.0);
    for (double x : {0.1, 0.5, 0.9}) {
        EXPECT_NEAR(v.velocity(x, 0.0)[1], 0.0, 1e-14);
        EXPECT_NEAR(v.velocity(x, 1.0)[1], 0.0, 1e-14);
        EXPECT_NEAR(v.velocity(x, -1.0)[1], 0.0, 1e-14);
        EXPECT_EQ(v.divergence(x, 0.3), 0.0);
    }
    EXPECT_NEAR(v.max_speed(), 2.0 * std::numbers::pi, 1e-12);
    const AdvectionPreset c = AdvectionPreset::constant(1.5);
    EXPECT_EQ(c.velocity(0.3, 0.4)[0], 1.5);
    EXPECT_EQ(c.velocity(0.3, 0.4)[1], 0.0);
    EXPECT_EQ(AdvectionPreset::none().max_speed(), 0.0);
}

TEST(Coupling, CompatibilityAndDefiniteness) {
    Eigen::Matrix2d B;
    B << 1, -1, -1, 1;
    EXPECT_TRUE(conservation_compatible(B, InterfaceForcing::zero));
    EXPECT_TRUE(conservation_compatible(B, InterfaceForcing::antisymmetric));
    EXPECT_FALSE(conservation_compatible(B, InterfaceForcing::general));
    EXPECT_FALSE(conservation_compatible(Eigen::Matrix2d::Identity(), InterfaceForcing::zero));
    EXPECT_TRUE(coupling_psd(B));
    EXPECT_TRUE(coupling_psd(Eigen::Matrix2d::Identity()));
    Eigen::Matrix2d S;
    S << 0, 1, -1, 0;
    EXPECT_TRUE(coupling_psd(S));
    EXPECT_FALSE(coupling_psd(-Eigen::Matrix2d::Identity()));
}
