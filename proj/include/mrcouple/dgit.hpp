#pragma once

#include "mrcouple/fespace.hpp"
#include "mrcouple/timepoly.hpp"

#include <vector>

namespace mrcouple {

enum class TimeQuadrature {
    exact,      ///< Gauss rules exact for every polynomial integrand
    trapezoid,  ///< endpoint averages: dt * avg(a) * avg(b), the classical CN treatment
};

/// Quadrature used for the load terms (f_i, g_i) and the coupling terms
/// (flux tested on substeps, traces tested on the window).
struct QuadratureFlags {
    TimeQuadrature load = TimeQuadrature::exact;
    TimeQuadrature coupling = TimeQuadrature::exact;

    static QuadratureFlags exact_all() { return {}; }
    static QuadratureFlags crank_nicolson_classical() {
        return {TimeQuadrature::trapezoid, TimeQuadrature::trapezoid};
    }
};

/// Linear constraints of one substep.
///
/// Unknowns are ordered [c_0, ..., c_q, U^n] (each a d_Omega block, c_m the
/// Legendre coefficients of u^n). The block encodes
///     system() x + sum_l history[l-1] U^{n-l} + flux F = load,
/// with F the window flux modes [F_0, ..., F_r] (each a d_Gamma block).
/// Side-condition rows come first, then the variational rows for test modes
/// 0 .. q + 1 - n_s.
struct SubstepBlock {
    int subdomain = 1;
    int index = 1;
    int dofs = 0;
    int q = 0;
    int side_count = 0;
    int flux_order = 0;

    SparseMatrix mass_part;       ///< everything except the L terms
    SparseMatrix stiffness_part;  ///< the int L(u, v) terms
    std::vector<SparseMatrix> history;
    SparseMatrix flux;
    Eigen::VectorXd load;

    SparseMatrix system() const { return mass_part + stiffness_part; }
    int rows() const { return (q + 2) * dofs; }
};

/// Gram matrix X(m, p) = int_I psi_m(x_I(t)) psi_p(x_W(t)) dt between the
/// substep modes 0..m_max on `substep` and the window modes 0..p_max.
/// The trapezoid variant is dt * avg(psi_m(-1), psi_m(1)) * avg(psi_p at the substep ends).
Eigen::MatrixXd cross_gram(const Interval& substep, const Interval& window, int m_max, int p_max,
                           TimeQuadrature mode);

/// int_I load(t) psi_j(x_I(t)) dt for j = 0..j_max (columns), or the
/// trapezoid average form. Exact mode uses Gauss rules with j_max + 8 points.
Eigen::MatrixXd load_moments(const LoadFunction& load, int dim, const Interval& substep,
                             const Interval& basis, int j_max, TimeQuadrature mode);

/// Assembles the substep constraints. `window` carries the flux modes; the
/// substep must lie inside it. Throws StructuralError when r < 0 or the
/// substep leaves the window, PreconditionError for an unchecked singular scheme.
SubstepBlock assemble_substep(const SubdomainOperators& sub, const SparseMatrix& interface_mass,
                              const SchemeSpec& spec, const Interval& substep, int r,
                              const Interval& window, QuadratureFlags flags = {}, int subdomain = 1,
                              int index = 1);

/// Solves a block for its unknowns given the history side values and flux modes.
Eigen::VectorXd solve_substep(const SubstepBlock& block, const std::vector<Eigen::VectorXd>& history,
                              const Eigen::VectorXd& flux_modes);

/// Classical Crank-Nicolson step
///     (M + dt L / 2) U^n = (M - dt L / 2) U^{n-1} - dt T^T M_Gamma (F)^{n-1/2} + dt (f)^{n-1/2}
/// where (.)^{n-1/2} averages the endpoint values. Returns U^n.
Eigen::VectorXd cn_substep(const SubdomainOperators& sub, const SparseMatrix& interface_mass,
                           const Interval& substep, const TimePoly& flux, const Eigen::VectorXd& u_prev);

}  // namespace mrcouple
