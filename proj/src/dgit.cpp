#include "mrcouple/dgit.hpp"

#include "mrcouple/error.hpp"

#include <Eigen/SparseLU>

#include <string>

namespace mrcouple {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

void add_block(Triplets& out, const SparseMatrix& A, double coef, int row0, int col0) {
    if (coef == 0.0) return;
    for (int k = 0; k < A.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
            out.emplace_back(row0 + static_cast<int>(it.row()), col0 + static_cast<int>(it.col()),
                             coef * it.value());
        }
    }
}

void add_identity(Triplets& out, int d, double coef, int row0, int col0) {
    if (coef == 0.0) return;
    for (int k = 0; k < d; ++k) out.emplace_back(row0 + k, col0 + k, coef);
}

SparseMatrix from_triplets(int rows, int cols, const Triplets& t) {
    SparseMatrix A(rows, cols);
    A.setFromTriplets(t.begin(), t.end());
    return A;
}

double endpoint_average(int j) { return 0.5 * (legendre_eval(j, -1.0) + legendre_eval(j, 1.0)); }

}  // namespace

Eigen::MatrixXd cross_gram(const Interval& substep, const Interval& window, int m_max, int p_max,
                           TimeQuadrature mode) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(m_max + 1, p_max + 1);
    const double dt = substep.length();
    if (mode == TimeQuadrature::trapezoid) {
        const double xa = window.to_reference(substep.a());
        const double xb = window.to_reference(substep.b());
        for (int m = 0; m <= m_max; ++m) {
            for (int p = 0; p <= p_max; ++p) {
                X(m, p) = dt * endpoint_average(m) * 0.5 * (legendre_eval(p, xa) + legendre_eval(p, xb));
            }
        }
        return X;
    }
    const GaussRule rule = gauss_rule(gauss_points_for_degree(m_max + p_max));
    for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
        const double t = substep.from_reference(rule.nodes[g]);
        const Eigen::VectorXd sub = legendre_values(m_max, rule.nodes[g]);
        const Eigen::VectorXd win = legendre_values(p_max, window.to_reference(t));
        X += (0.5 * dt * rule.weights[g]) * sub * win.transpose();
    }
    return X;
}

Eigen::MatrixXd load_moments(const LoadFunction& load, int dim, const Interval& substep,
                             const Interval& basis, int j_max, TimeQuadrature mode) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, j_max + 1);
    if (!load) return out;
    const double dt = substep.length();
    if (mode == TimeQuadrature::trapezoid) {
        const Eigen::VectorXd avg = 0.5 * (load(substep.a()) + load(substep.b()));
        const double xa = basis.to_reference(substep.a());
        const double xb = basis.to_reference(substep.b());
        for (int j = 0; j <= j_max; ++j) {
            out.col(j) = dt * 0.5 * (legendre_eval(j, xa) + legendre_eval(j, xb)) * avg;
        }
        return out;
    }
    const GaussRule rule = gauss_rule(j_max + 8);
    for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
        const double t = substep.from_reference(rule.nodes[g]);
        const Eigen::VectorXd value = load(t);
        const Eigen::VectorXd psi = legendre_values(j_max, basis.to_reference(t));
        out += (0.5 * dt * rule.weights[g]) * value * psi.transpose();
    }
    return out;
}

SubstepBlock assemble_substep(const SubdomainOperators& sub, const SparseMatrix& interface_mass,
                              const SchemeSpec& spec, const Interval& substep, int r,
                              const Interval& window, QuadratureFlags flags, int subdomain, int index) {
    if (r < 0) throw StructuralError("assemble_substep: flux order must be >= 0");
    if (!window.contains(substep)) {
        throw StructuralError("assemble_substep: substep (" + std::to_string(substep.a()) + ", " +
                              std::to_string(substep.b()) + ") is not inside the window");
    }
    if (!spec.checked() && spec.side_count() > 0 && !build_dtilde(spec).nonsingular) {
        throw PreconditionError("assemble_substep: D-tilde of scheme '" + spec.name() + "' is singular");
    }

    const int d = sub.dofs();
    const int dg = static_cast<int>(interface_mass.rows());
    const int q = spec.q();
    const int ns = spec.side_count();
    const int ks = std::max(1, spec.reach_back());
    const double dt = substep.length();
    const Eigen::MatrixXd& D = spec.side_matrix();

    SubstepBlock block;
    block.subdomain = subdomain;
    block.index = index;
    block.dofs = d;
    block.q = q;
    block.side_count = ns;
    block.flux_order = r;

    const int rows = (q + 2) * d;
    const int u_col = (q + 1) * d;
    Triplets mass, stiff;
    std::vector<Triplets> history(ks);

    // Side conditions u(t^{n-1} + theta_k dt) = sum_l D(k, l) U^{n-l}.
    for (int k = 0; k < ns; ++k) {
        const int row = k * d;
        const double x = 2.0 * spec.thetas()[k] - 1.0;
        for (int m = 0; m <= q; ++m) add_identity(mass, d, legendre_eval(m, x), row, m * d);
        add_identity(mass, d, -D(k, 0), row, u_col);
        for (int l = 1; l < D.cols(); ++l) add_identity(history[l - 1], d, -D(k, l), row, 0);
    }

    // Variational rows, test psi_j for j = 0 .. q + 1 - n_s.
    const int jt = spec.test_order();
    const GaussRule rule = gauss_rule(q + 2);
    const SparseMatrix flux_map = sub.trace.transpose() * interface_mass;
    const Eigen::MatrixXd gram = cross_gram(substep, window, jt, r, flags.coupling);
    const Eigen::MatrixXd moments = load_moments(sub.body_load, d, substep, substep, jt, flags.load);
    Triplets flux;
    block.load = Eigen::VectorXd::Zero(rows);

    for (int j = 0; j <= jt; ++j) {
        const int row = (ns + j) * d;
        add_block(mass, sub.mass, legendre_eval(j, 1.0), row, u_col);
        for (int m = 0; m <= q; ++m) {
            double integral = 0.0;
            for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
                integral += rule.weights[g] * legendre_eval(m, rule.nodes[g]) *
                            legendre_derivative(j, rule.nodes[g]);
            }
            add_block(mass, sub.mass, -integral, row, m * d);
        }
        if (j <= q) add_block(stiff, sub.op, dt / (2.0 * j + 1.0), row, j * d);
        add_block(history[0], sub.mass, -legendre_eval(j, -1.0), row, 0);
        for (int p = 0; p <= r; ++p) add_block(flux, flux_map, gram(j, p), row, p * dg);
        block.load.segment(row, d) = moments.col(j);
    }

    block.mass_part = from_triplets(rows, rows, mass);
    block.stiffness_part = from_triplets(rows, rows, stiff);
    for (int l = 0; l < ks; ++l) block.history.push_back(from_triplets(rows, d, history[l]));
    block.flux = from_triplets(rows, (r + 1) * dg, flux);
    return block;
}

Eigen::VectorXd solve_substep(const SubstepBlock& block, const std::vector<Eigen::VectorXd>& history,
                              const Eigen::VectorXd& flux_modes) {
    if (history.size() < block.history.size()) {
        throw StructuralError("solve_substep: block needs " + std::to_string(block.history.size()) +
                              " history values, got " + std::to_string(history.size()));
    }
    Eigen::VectorXd rhs = block.load - block.flux * flux_modes;
    for (std::size_t l = 0; l < block.history.size(); ++l) rhs -= block.history[l] * history[l];
    Eigen::SparseLU<SparseMatrix> lu;
    SparseMatrix A = block.system();
    A.makeCompressed();
    lu.compute(A);
    if (lu.info() != Eigen::Success) {
        throw SolverError("solve_substep: factorization failed: " + lu.lastErrorMessage());
    }
    return lu.solve(rhs);
}

Eigen::VectorXd cn_substep(const SubdomainOperators& sub, const SparseMatrix& interface_mass,
                           const Interval& substep, const TimePoly& flux, const Eigen::VectorXd& u_prev) {
    const double dt = substep.length();
    SparseMatrix lhs = sub.mass + (0.5 * dt) * sub.op;
    const SparseMatrix rhs_op = sub.mass - (0.5 * dt) * sub.op;
    Eigen::VectorXd rhs = rhs_op * u_prev;
    if (flux.dim() > 0) {
        const Eigen::VectorXd f_mid = 0.5 * (flux(substep.a()) + flux(substep.b()));
        rhs -= dt * (sub.trace.transpose() * (interface_mass * f_mid));
    }
    if (sub.body_load) rhs += (0.5 * dt) * (sub.body_load(substep.a()) + sub.body_load(substep.b()));
    lhs.makeCompressed();
    Eigen::SparseLU<SparseMatrix> lu(lhs);
    if (lu.info() != Eigen::Success) throw SolverError("cn_substep: factorization failed");
    return lu.solve(rhs);
}

}  // namespace mrcouple
