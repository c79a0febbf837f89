#pragma once

#include "mrcouple/mesh.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <functional>

namespace mrcouple {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Steady advection field of one subdomain. Every preset has s . n = 0 on the
/// interface and on y = +-1; the constant field is tangential to the interface
/// and meets the lateral Dirichlet sides, where the trial functions vanish.
struct AdvectionPreset {
    enum class Kind { zero, constant_tangential, vortex };

    Kind kind = Kind::zero;
    double strength = 0.0;  ///< s_x for the constant field, amplitude for the vortex

    static AdvectionPreset none() { return {}; }
    static AdvectionPreset constant(double sx) { return {Kind::constant_tangential, sx}; }
    static AdvectionPreset vortex(double amplitude) { return {Kind::vortex, amplitude}; }

    /// Analytic field. The vortex is the curl of amplitude * sin(pi x) sin(pi y).
    std::array<double, 2> velocity(double x, double y) const;
    double divergence(double x, double y) const;
    double max_speed() const;
};

using SpaceTimeFn = std::function<double(double x, double y, double t)>;
using InterfaceFn = std::function<double(double x, double t)>;
using SpaceFn = std::function<double(double x, double y)>;
using LoadFunction = std::function<Eigen::VectorXd(double t)>;

/// Declared relation between the two interface forcings g_1, g_2.
enum class InterfaceForcing { zero, antisymmetric, general };

/// b11 = -b21, b12 = -b22 and g1 = -g2.
bool conservation_compatible(const Eigen::Matrix2d& B, InterfaceForcing g);
/// Symmetric part of B has eigenvalues >= -1e-12.
bool coupling_psd(const Eigen::Matrix2d& B);

/// Continuous model data of the coupled advection-diffusion problem.
struct ProblemSpec {
    std::array<double, 2> nu{1.0, 1.0};
    std::array<AdvectionPreset, 2> advection{};
    Eigen::Matrix2d coupling = Eigen::Matrix2d::Identity();
    std::array<SpaceTimeFn, 2> body_forcing{};      ///< empty means zero
    std::array<InterfaceFn, 2> interface_forcing{};  ///< empty means zero
    InterfaceForcing interface_forcing_kind = InterfaceForcing::zero;
    std::array<SpaceFn, 2> initial{};  ///< empty means zero

    /// Throws StructuralError on nu <= 0 or an inconsistent forcing declaration.
    void validate() const;
    bool conservation_compatible() const;
    bool coupling_psd() const;
};

/// Assembled operators of one subdomain (Dirichlet dofs eliminated).
struct SubdomainOperators {
    SparseMatrix mass;
    SparseMatrix diffusion;
    SparseMatrix advection;  ///< entries b(phi_j, phi_i) = int div(s phi_j) phi_i
    SparseMatrix op;         ///< L = diffusion + advection
    SparseMatrix trace;      ///< d_Gamma x d_Omega selection of interface coefficients
    Eigen::VectorXd initial;
    LoadFunction body_load;  ///< t -> (f_i(t), phi_k); empty means zero

    int dofs() const { return static_cast<int>(mass.rows()); }
    Eigen::VectorXd body_load_at(double t) const;
};

/// Spatial operators of the coupled semi-discrete system.
struct FeOperators {
    std::array<SubdomainOperators, 2> sub;
    SparseMatrix interface_mass;  ///< (mu_j, mu_k)_Gamma
    Eigen::Matrix2d coupling = Eigen::Matrix2d::Zero();
    std::array<LoadFunction, 2> interface_load{};  ///< t -> (g_i(t), mu_k)_Gamma
    InterfaceForcing interface_forcing = InterfaceForcing::zero;
    double h = 1.0;  ///< max element diameter (1 for matrix-defined problems)

    int interface_dofs() const { return static_cast<int>(interface_mass.rows()); }
    Eigen::VectorXd interface_load_at(int i, double t) const;
    bool conservation_compatible() const;
    bool coupling_psd() const;
    bool has_forcing() const;
};

/// Assembles every bilinear form with 2x2 Gauss quadrature per element.
/// Loads use 3x3 Gauss points per element and 3 points per interface segment.
FeOperators assemble(const Mesh& m1, const Mesh& m2, const InterfaceMap& map, const ProblemSpec& spec);

/// Matrix-defined operators bypassing the mesh. M_i and M_Gamma must be SPD.
/// L_i is stored as the diffusion part with zero advection.
FeOperators from_matrices(const SparseMatrix& M1, const SparseMatrix& L1, const SparseMatrix& T1,
                          const SparseMatrix& M2, const SparseMatrix& L2, const SparseMatrix& T2,
                          const SparseMatrix& M_gamma, const Eigen::Matrix2d& B);

/// Dense convenience overload.
FeOperators from_matrices(const Eigen::MatrixXd& M1, const Eigen::MatrixXd& L1, const Eigen::MatrixXd& T1,
                          const Eigen::MatrixXd& M2, const Eigen::MatrixXd& L2, const Eigen::MatrixXd& T2,
                          const Eigen::MatrixXd& M_gamma, const Eigen::Matrix2d& B);

/// The scalar two-ODE, one-interface-unknown problem (M = L = T = M_Gamma = 1).
FeOperators scalar_toy(const Eigen::Matrix2d& B, double L1 = 1.0, double L2 = 1.0);

/// Minimum Rayleigh quotient v^T L v / v^T v over 50 seeded random vectors,
/// taken over both subdomains.
double coercivity_probe(const FeOperators& ops);

/// True when the matrix is symmetric (to 1e-12 relative) and Cholesky-factorizable.
bool is_spd(const SparseMatrix& A);

}  // namespace mrcouple
