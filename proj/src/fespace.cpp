#include "mrcouple/fespace.hpp"

#include "mrcouple/error.hpp"
#include "mrcouple/timepoly.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

namespace mrcouple {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;
constexpr double pi = std::numbers::pi;

// Reference corners of the bilinear element, counter-clockwise from (-1,-1).
constexpr std::array<double, 4> kXi{-1.0, 1.0, 1.0, -1.0};
constexpr std::array<double, 4> kEta{-1.0, -1.0, 1.0, 1.0};

struct ShapeEval {
    std::array<double, 4> N;
    std::array<double, 4> dNdx;
    std::array<double, 4> dNdy;
};

ShapeEval shape(double xi, double eta, double hx, double hy) {
    ShapeEval s;
    for (int a = 0; a < 4; ++a) {
        s.N[a] = 0.25 * (1.0 + kXi[a] * xi) * (1.0 + kEta[a] * eta);
        s.dNdx[a] = 0.25 * kXi[a] * (1.0 + kEta[a] * eta) * 2.0 / hx;
        s.dNdy[a] = 0.25 * (1.0 + kXi[a] * xi) * kEta[a] * 2.0 / hy;
    }
    return s;
}

// Sparse operator mapping values at quadrature points to load vectors:
// load = weights * values, plus the physical coordinates of the points.
struct QuadratureLoad {
    SparseMatrix weights;
    std::vector<std::array<double, 2>> points;
};

QuadratureLoad volume_load_quadrature(const Mesh& mesh) {
    const GaussRule rule = gauss_rule(3);
    QuadratureLoad q;
    Triplets trip;
    for (const auto& el : mesh.elements) {
        const auto& p0 = mesh.nodes[el[0]];
        const auto& p2 = mesh.nodes[el[2]];
        const double hx = p2[0] - p0[0];
        const double hy = p2[1] - p0[1];
        const double detJ = 0.25 * hx * hy;
        for (std::size_t gx = 0; gx < rule.nodes.size(); ++gx) {
            for (std::size_t gy = 0; gy < rule.nodes.size(); ++gy) {
                const double xi = rule.nodes[gx];
                const double eta = rule.nodes[gy];
                const ShapeEval s = shape(xi, eta, hx, hy);
                const int col = static_cast<int>(q.points.size());
                q.points.push_back({p0[0] + 0.5 * (xi + 1.0) * hx, p0[1] + 0.5 * (eta + 1.0) * hy});
                const double w = rule.weights[gx] * rule.weights[gy] * detJ;
                for (int a = 0; a < 4; ++a) {
                    const int dof = mesh.dof_of_node[el[a]];
                    if (dof >= 0) trip.emplace_back(dof, col, w * s.N[a]);
                }
            }
        }
    }
    q.weights.resize(mesh.dof_count(), static_cast<int>(q.points.size()));
    q.weights.setFromTriplets(trip.begin(), trip.end());
    return q;
}

// Interface segments run between consecutive nodes on y = 0 (endpoints included,
// their coefficients are eliminated).
struct InterfaceSegments {
    std::vector<double> x;     ///< all nodes on y = 0, including x = 0 and x = 1
    std::vector<int> slot;     ///< interface slot per node, -1 at the endpoints
};

InterfaceSegments interface_segments(const InterfaceMap& map) {
    InterfaceSegments seg;
    seg.x.push_back(0.0);
    seg.slot.push_back(-1);
    for (int s = 0; s < map.size(); ++s) {
        seg.x.push_back(map.x[s]);
        seg.slot.push_back(s);
    }
    seg.x.push_back(1.0);
    seg.slot.push_back(-1);
    return seg;
}

QuadratureLoad interface_load_quadrature(const InterfaceMap& map) {
    const InterfaceSegments seg = interface_segments(map);
    const GaussRule rule = gauss_rule(3);
    QuadratureLoad q;
    Triplets trip;
    for (std::size_t e = 0; e + 1 < seg.x.size(); ++e) {
        const double x0 = seg.x[e];
        const double hx = seg.x[e + 1] - x0;
        for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
            const double xi = rule.nodes[g];
            const int col = static_cast<int>(q.points.size());
            q.points.push_back({x0 + 0.5 * (xi + 1.0) * hx, 0.0});
            const double w = rule.weights[g] * 0.5 * hx;
            const std::array<double, 2> N{0.5 * (1.0 - xi), 0.5 * (1.0 + xi)};
            for (int a = 0; a < 2; ++a) {
                const int s = seg.slot[e + a];
                if (s >= 0) trip.emplace_back(s, col, w * N[a]);
            }
        }
    }
    q.weights.resize(map.size(), static_cast<int>(q.points.size()));
    q.weights.setFromTriplets(trip.begin(), trip.end());
    return q;
}

LoadFunction make_body_load(const Mesh& mesh, SpaceTimeFn f) {
    if (!f) return {};
    auto quad = std::make_shared<const QuadratureLoad>(volume_load_quadrature(mesh));
    return [quad, f = std::move(f)](double t) {
        Eigen::VectorXd values(quad->points.size());
        for (std::size_t k = 0; k < quad->points.size(); ++k) {
            values(k) = f(quad->points[k][0], quad->points[k][1], t);
        }
        return Eigen::VectorXd(quad->weights * values);
    };
}

LoadFunction make_interface_load(const InterfaceMap& map, InterfaceFn g) {
    if (!g) return {};
    auto quad = std::make_shared<const QuadratureLoad>(interface_load_quadrature(map));
    return [quad, g = std::move(g)](double t) {
        Eigen::VectorXd values(quad->points.size());
        for (std::size_t k = 0; k < quad->points.size(); ++k) values(k) = g(quad->points[k][0], t);
        return Eigen::VectorXd(quad->weights * values);
    };
}

SubdomainOperators assemble_subdomain(const Mesh& mesh, const InterfaceMap& map, int which,
                                      const ProblemSpec& spec) {
    const int n = mesh.dof_count();
    const double nu = spec.nu[which];
    const AdvectionPreset& adv = spec.advection[which];
    const GaussRule rule = gauss_rule(2);

    Triplets mass, diff, advection;
    for (const auto& el : mesh.elements) {
        const auto& p0 = mesh.nodes[el[0]];
        const auto& p2 = mesh.nodes[el[2]];
        const double hx = p2[0] - p0[0];
        const double hy = p2[1] - p0[1];
        const double detJ = 0.25 * hx * hy;

        // Nodal stream function for the discrete vortex (curl of its bilinear interpolant).
        std::array<double, 4> psi{};
        if (adv.kind == AdvectionPreset::Kind::vortex) {
            for (int a = 0; a < 4; ++a) {
                const auto& p = mesh.nodes[el[a]];
                psi[a] = adv.strength * std::sin(pi * p[0]) * std::sin(pi * p[1]);
            }
        }

        for (std::size_t gx = 0; gx < rule.nodes.size(); ++gx) {
            for (std::size_t gy = 0; gy < rule.nodes.size(); ++gy) {
                const ShapeEval s = shape(rule.nodes[gx], rule.nodes[gy], hx, hy);
                const double w = rule.weights[gx] * rule.weights[gy] * detJ;

                std::array<double, 2> vel{0.0, 0.0};
                if (adv.kind == AdvectionPreset::Kind::constant_tangential) {
                    vel = {adv.strength, 0.0};
                } else if (adv.kind == AdvectionPreset::Kind::vortex) {
                    for (int a = 0; a < 4; ++a) {
                        vel[0] += psi[a] * s.dNdy[a];
                        vel[1] -= psi[a] * s.dNdx[a];
                    }
                }
                // Both shipped fields are divergence-free element by element.

                for (int a = 0; a < 4; ++a) {
                    const int row = mesh.dof_of_node[el[a]];
                    if (row < 0) continue;
                    for (int b = 0; b < 4; ++b) {
                        const int col = mesh.dof_of_node[el[b]];
                        if (col < 0) continue;
                        mass.emplace_back(row, col, w * s.N[a] * s.N[b]);
                        diff.emplace_back(row, col, w * nu * (s.dNdx[a] * s.dNdx[b] + s.dNdy[a] * s.dNdy[b]));
                        if (adv.kind != AdvectionPreset::Kind::zero) {
                            advection.emplace_back(
                                row, col, w * (vel[0] * s.dNdx[b] + vel[1] * s.dNdy[b]) * s.N[a]);
                        }
                    }
                }
            }
        }
    }

    SubdomainOperators op;
    op.mass.resize(n, n);
    op.mass.setFromTriplets(mass.begin(), mass.end());
    op.diffusion.resize(n, n);
    op.diffusion.setFromTriplets(diff.begin(), diff.end());
    op.advection.resize(n, n);
    op.advection.setFromTriplets(advection.begin(), advection.end());
    op.op = op.diffusion + op.advection;

    Triplets tr;
    for (int s = 0; s < map.size(); ++s) tr.emplace_back(s, map.dof_of_slot[which][s], 1.0);
    op.trace.resize(map.size(), n);
    op.trace.setFromTriplets(tr.begin(), tr.end());

    op.body_load = make_body_load(mesh, spec.body_forcing[which]);

    op.initial = Eigen::VectorXd::Zero(n);
    if (spec.initial[which] && n > 0) {
        const QuadratureLoad quad = volume_load_quadrature(mesh);
        Eigen::VectorXd values(quad.points.size());
        for (std::size_t k = 0; k < quad.points.size(); ++k) {
            values(k) = spec.initial[which](quad.points[k][0], quad.points[k][1]);
        }
        Eigen::SimplicialLDLT<SparseMatrix> mass_solver(op.mass);
        op.initial = mass_solver.solve(quad.weights * values);
    }
    return op;
}

}  // namespace

// ---------------------------------------------------------------------------

std::array<double, 2> AdvectionPreset::velocity(double x, double y) const {
    switch (kind) {
        case Kind::zero: return {0.0, 0.0};
        case Kind::constant_tangential: return {strength, 0.0};
        case Kind::vortex:
            return {strength * pi * std::sin(pi * x) * std::cos(pi * y),
                    -strength * pi * std::cos(pi * x) * std::sin(pi * y)};
    }
    return {0.0, 0.0};
}

double AdvectionPreset::divergence(double, double) const { return 0.0; }

double AdvectionPreset::max_speed() const {
    switch (kind) {
        case Kind::zero: return 0.0;
        case Kind::constant_tangential: return std::abs(strength);
        case Kind::vortex: return std::abs(strength) * pi;
    }
    return 0.0;
}

bool conservation_compatible(const Eigen::Matrix2d& B, InterfaceForcing g) {
    return B(0, 0) == -B(1, 0) && B(0, 1) == -B(1, 1) && g != InterfaceForcing::general;
}

bool coupling_psd(const Eigen::Matrix2d& B) {
    const Eigen::Matrix2d sym = 0.5 * (B + B.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(sym);
    return eig.eigenvalues().minCoeff() >= -1e-12;
}

void ProblemSpec::validate() const {
    for (int i = 0; i < 2; ++i) {
        if (!(nu[i] > 0.0)) {
            throw StructuralError("ProblemSpec: nu_" + std::to_string(i + 1) + " must be positive");
        }
    }
    const bool any_g = interface_forcing[0] || interface_forcing[1];
    if (interface_forcing_kind == InterfaceForcing::zero && any_g) {
        throw StructuralError("ProblemSpec: interface forcing declared zero but g is set");
    }
    if (interface_forcing_kind != InterfaceForcing::zero && !any_g) {
        throw StructuralError("ProblemSpec: interface forcing declared nonzero but g is unset");
    }
}

bool ProblemSpec::conservation_compatible() const {
    return mrcouple::conservation_compatible(coupling, interface_forcing_kind);
}

bool ProblemSpec::coupling_psd() const { return mrcouple::coupling_psd(coupling); }

Eigen::VectorXd SubdomainOperators::body_load_at(double t) const {
    if (!body_load) return Eigen::VectorXd::Zero(dofs());
    return body_load(t);
}

Eigen::VectorXd FeOperators::interface_load_at(int i, double t) const {
    if (!interface_load[i]) return Eigen::VectorXd::Zero(interface_dofs());
    return interface_load[i](t);
}

bool FeOperators::conservation_compatible() const {
    return mrcouple::conservation_compatible(coupling, interface_forcing);
}

bool FeOperators::coupling_psd() const { return mrcouple::coupling_psd(coupling); }

bool FeOperators::has_forcing() const {
    return sub[0].body_load || sub[1].body_load || interface_load[0] || interface_load[1];
}

FeOperators assemble(const Mesh& m1, const Mesh& m2, const InterfaceMap& map, const ProblemSpec& spec) {
    spec.validate();
    if (m1.subdomain != 1 || m2.subdomain != 2) {
        throw StructuralError("assemble: expected meshes of subdomain 1 and 2 in that order");
    }
    if (static_cast<int>(map.slot_of_dof[0].size()) != m1.dof_count() ||
        static_cast<int>(map.slot_of_dof[1].size()) != m2.dof_count()) {
        throw StructuralError("assemble: interface map does not belong to these meshes");
    }
    for (int i = 0; i < 2; ++i) {
        const Mesh& m = i == 0 ? m1 : m2;
        const double peclet = spec.advection[i].max_speed() * m.h / (2.0 * spec.nu[i]);
        if (peclet > 1.0) {
            spdlog::warn("assemble: subdomain {} has mesh Peclet number {:.3g} > 1; no stabilization is applied",
                         i + 1, peclet);
        }
    }

    FeOperators ops;
    ops.sub[0] = assemble_subdomain(m1, map, 0, spec);
    ops.sub[1] = assemble_subdomain(m2, map, 1, spec);

    const InterfaceSegments seg = interface_segments(map);
    Triplets trip;
    for (std::size_t e = 0; e + 1 < seg.x.size(); ++e) {
        const double hx = seg.x[e + 1] - seg.x[e];
        const std::array<int, 2> s{seg.slot[e], seg.slot[e + 1]};
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                if (s[a] < 0 || s[b] < 0) continue;
                trip.emplace_back(s[a], s[b], hx * (a == b ? 2.0 : 1.0) / 6.0);
            }
        }
    }
    ops.interface_mass.resize(map.size(), map.size());
    ops.interface_mass.setFromTriplets(trip.begin(), trip.end());

    ops.coupling = spec.coupling;
    ops.interface_forcing = spec.interface_forcing_kind;
    for (int i = 0; i < 2; ++i) ops.interface_load[i] = make_interface_load(map, spec.interface_forcing[i]);
    ops.h = std::max(m1.h, m2.h);
    return ops;
}

bool is_spd(const SparseMatrix& A) {
    if (A.rows() != A.cols()) return false;
    if (A.rows() == 0) return true;
    const SparseMatrix At = A.transpose();
    const double norm = A.norm();
    if ((A - At).norm() > 1e-12 * norm) return false;
    Eigen::SimplicialLLT<SparseMatrix> llt(A);
    return llt.info() == Eigen::Success;
}

FeOperators from_matrices(const SparseMatrix& M1, const SparseMatrix& L1, const SparseMatrix& T1,
                          const SparseMatrix& M2, const SparseMatrix& L2, const SparseMatrix& T2,
                          const SparseMatrix& M_gamma, const Eigen::Matrix2d& B) {
    const std::array<const SparseMatrix*, 2> M{&M1, &M2};
    const std::array<const SparseMatrix*, 2> L{&L1, &L2};
    const std::array<const SparseMatrix*, 2> T{&T1, &T2};
    const long dg = M_gamma.rows();
    if (M_gamma.cols() != dg) throw StructuralError("from_matrices: M_gamma must be square");
    if (dg > 0 && !is_spd(M_gamma)) throw StructuralError("from_matrices: M_gamma is not SPD");

    FeOperators ops;
    for (int i = 0; i < 2; ++i) {
        const std::string tag = "from_matrices: subdomain " + std::to_string(i + 1) + ": ";
        const long d = M[i]->rows();
        if (M[i]->cols() != d || L[i]->rows() != d || L[i]->cols() != d) {
            throw StructuralError(tag + "M and L must be square with matching size");
        }
        if (T[i]->rows() != dg || T[i]->cols() != d) {
            throw StructuralError(tag + "T must be d_Gamma x d_Omega");
        }
        if (!is_spd(*M[i])) throw StructuralError(tag + "M is not SPD");
        SubdomainOperators& s = ops.sub[i];
        s.mass = *M[i];
        s.diffusion = *L[i];
        s.advection.resize(d, d);
        s.op = *L[i];
        s.trace = *T[i];
        s.initial = Eigen::VectorXd::Zero(d);
    }
    ops.interface_mass = M_gamma;
    ops.coupling = B;
    return ops;
}

FeOperators from_matrices(const Eigen::MatrixXd& M1, const Eigen::MatrixXd& L1, const Eigen::MatrixXd& T1,
                          const Eigen::MatrixXd& M2, const Eigen::MatrixXd& L2, const Eigen::MatrixXd& T2,
                          const Eigen::MatrixXd& M_gamma, const Eigen::Matrix2d& B) {
    auto sp = [](const Eigen::MatrixXd& A) { return SparseMatrix(A.sparseView(0.0, 0.0)); };
    return from_matrices(sp(M1), sp(L1), sp(T1), sp(M2), sp(L2), sp(T2), sp(M_gamma), B);
}

FeOperators scalar_toy(const Eigen::Matrix2d& B, double L1, double L2) {
    const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
    return from_matrices(one, L1 * one, one, one, L2 * one, one, one, B);
}

double coercivity_probe(const FeOperators& ops) {
    std::mt19937_64 rng(20240917);
    std::normal_distribution<double> normal(0.0, 1.0);
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const SubdomainOperators& s : ops.sub) {
        const int d = s.dofs();
        if (d == 0) continue;
        any = true;
        for (int trial = 0; trial < 50; ++trial) {
            Eigen::VectorXd v(d);
            for (int k = 0; k < d; ++k) v(k) = normal(rng);
            const double quotient = v.dot(s.op * v) / v.squaredNorm();
            best = std::min(best, quotient);
        }
    }
    if (!any) throw PreconditionError("coercivity_probe: no degrees of freedom");
    return best;
}

}  // namespace mrcouple
