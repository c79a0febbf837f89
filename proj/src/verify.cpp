#include "mrcouple/verify.hpp"

#include "mrcouple/error.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/SparseLU>

#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

namespace mrcouple {

namespace {

constexpr double pi = std::numbers::pi;
using Triplets = std::vector<Eigen::Triplet<double>>;

// Hyper-dual number: exact first and second derivatives along two seeds.
struct HyperDual {
    double v = 0.0, e1 = 0.0, e2 = 0.0, e12 = 0.0;
};

HyperDual operator+(HyperDual a, HyperDual b) { return {a.v + b.v, a.e1 + b.e1, a.e2 + b.e2, a.e12 + b.e12}; }
HyperDual operator*(HyperDual a, HyperDual b) {
    return {a.v * b.v, a.v * b.e1 + a.e1 * b.v, a.v * b.e2 + a.e2 * b.v,
            a.v * b.e12 + a.e1 * b.e2 + a.e2 * b.e1 + a.e12 * b.v};
}
HyperDual operator*(double s, HyperDual a) { return {s * a.v, s * a.e1, s * a.e2, s * a.e12}; }
HyperDual operator+(double s, HyperDual a) { return {s + a.v, a.e1, a.e2, a.e12}; }

// Applies a scalar function with value f0, derivative f1 and second derivative f2.
HyperDual chain(HyperDual a, double f0, double f1, double f2) {
    return {f0, f1 * a.e1, f1 * a.e2, f1 * a.e12 + f2 * a.e1 * a.e2};
}
HyperDual sin(HyperDual a) { return chain(a, std::sin(a.v), std::cos(a.v), -std::sin(a.v)); }
HyperDual exp(HyperDual a) {
    const double e = std::exp(a.v);
    return chain(a, e, e, e);
}

template <class T>
T horner(const std::vector<double>& c, T y) {
    T out{};
    out = 0.0 * y;
    for (std::size_t k = c.size(); k-- > 0;) out = c[k] + out * y;
    return out;
}

template <class T>
T time_profile(SeparableSolution::Time kind, T t) {
    switch (kind) {
        case SeparableSolution::Time::exponential: return exp(-1.0 * t);
        case SeparableSolution::Time::linear: return 1.0 + t;
        case SeparableSolution::Time::quadratic: return 1.0 + t + (-1.0) * (t * t);
    }
    return t;
}

// u_i evaluated on hyper-dual arguments.
HyperDual separable_hd(const SeparableSolution& s, int i, HyperDual x, HyperDual y, HyperDual t) {
    return sin(pi * x) * horner(s.profile[i], y) * time_profile(s.time, t);
}

struct Derivatives {
    double u, ut, ux, uy, uxx, uyy;
};

Derivatives derivatives(const SeparableSolution& s, int i, double x, double y, double t) {
    Derivatives d{};
    const HyperDual X{x}, Y{y}, T{t};
    const HyperDual ht = separable_hd(s, i, X, Y, {t, 1.0, 0.0, 0.0});
    const HyperDual hx = separable_hd(s, i, {x, 1.0, 1.0, 0.0}, Y, T);
    const HyperDual hy = separable_hd(s, i, X, {y, 1.0, 1.0, 0.0}, T);
    d.u = ht.v;
    d.ut = ht.e1;
    d.ux = hx.e1;
    d.uxx = hx.e12;
    d.uy = hy.e1;
    d.uyy = hy.e12;
    return d;
}

SparseMatrix block_diag(const SparseMatrix& A, const SparseMatrix& B) {
    Triplets t;
    for (int k = 0; k < A.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(A, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < B.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(B, k); it; ++it)
            t.emplace_back(A.rows() + it.row(), A.cols() + it.col(), it.value());
    SparseMatrix out(A.rows() + B.rows(), A.cols() + B.cols());
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

double SeparableSolution::a(double t) const {
    switch (time) {
        case Time::exponential: return std::exp(-t);
        case Time::linear: return 1.0 + t;
        case Time::quadratic: return 1.0 + t - t * t;
    }
    return 0.0;
}

double SeparableSolution::a_dot(double t) const {
    switch (time) {
        case Time::exponential: return -std::exp(-t);
        case Time::linear: return 1.0;
        case Time::quadratic: return 1.0 - 2.0 * t;
    }
    return 0.0;
}

double SeparableSolution::y_profile(int i, double y, int derivative) const {
    std::vector<double> c = profile[i];
    for (int k = 0; k < derivative; ++k) {
        if (c.size() <= 1) return 0.0;
        std::vector<double> dc(c.size() - 1);
        for (std::size_t j = 1; j < c.size(); ++j) dc[j - 1] = static_cast<double>(j) * c[j];
        c = std::move(dc);
    }
    return horner(c, y);
}

double SeparableSolution::value(int i, double x, double y, double t) const {
    return std::sin(pi * x) * y_profile(i, y) * a(t);
}

int SeparableSolution::temporal_degree() const {
    switch (time) {
        case Time::exponential: return -1;
        case Time::linear: return 1;
        case Time::quadratic: return 2;
    }
    return -1;
}

ManufacturedCase manufactured_case(const std::string& name, const ProblemSpec& base) {
    ManufacturedCase mc;
    mc.name = name;
    SeparableSolution& s = mc.solution;
    // Y_1(1) = 0 and Y_2(-1) = 0 keep the far boundaries homogeneous.
    s.profile = {std::vector<double>{1.0, 1.0, -2.0}, std::vector<double>{1.0, 0.5, -0.5}};
    if (name == "smooth") {
        s.time = SeparableSolution::Time::exponential;
    } else if (name == "poly1") {
        s.time = SeparableSolution::Time::linear;
        mc.discrete = true;
    } else if (name == "poly2") {
        s.time = SeparableSolution::Time::quadratic;
        mc.discrete = true;
    } else if (name == "antisymmetric") {
        s.time = SeparableSolution::Time::exponential;
        s.profile[1] = {-1.0, 1.0, 2.0};  // Y_2(y) = -Y_1(-y)
    } else {
        throw StructuralError("unknown manufactured solution '" + name +
                              "' (expected smooth, poly1, poly2 or antisymmetric)");
    }

    ProblemSpec& p = mc.problem;
    p = base;
    p.body_forcing = {};
    p.interface_forcing = {};
    const SeparableSolution sol = s;
    const Eigen::Matrix2d B = base.coupling;
    for (int i = 0; i < 2; ++i) {
        const double nu = base.nu[i];
        const AdvectionPreset adv = base.advection[i];
        p.body_forcing[i] = [sol, i, nu, adv](double x, double y, double t) {
            const double sx = std::sin(pi * x);
            const double Y = sol.y_profile(i, y);
            const double a = sol.a(t);
            const double ut = sx * Y * sol.a_dot(t);
            const double lap = (-pi * pi * sx * Y + sx * sol.y_profile(i, y, 2)) * a;
            const auto s_xy = adv.velocity(x, y);
            const double conv = s_xy[0] * pi * std::cos(pi * x) * Y * a + s_xy[1] * sx * sol.y_profile(i, y, 1) * a;
            return ut - nu * lap + conv + adv.divergence(x, y) * sx * Y * a;
        };
        // n_1 = (0, -1), n_2 = (0, 1) on y = 0.
        const double normal = i == 0 ? -1.0 : 1.0;
        p.interface_forcing[i] = [sol, i, nu, normal, B](double x, double t) {
            const double u1 = sol.value(0, x, 0.0, t);
            const double u2 = sol.value(1, x, 0.0, t);
            const double dudy = std::sin(pi * x) * sol.y_profile(i, 0.0, 1) * sol.a(t);
            return B(i, 0) * u1 + B(i, 1) * u2 + nu * normal * dudy;
        };
        p.initial[i] = [sol, i](double x, double y) { return sol.value(i, x, y, 0.0); };
    }

    // Classify g_1 + g_2 on samples to declare the forcing relation.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double gsum = 0.0, gmax = 0.0;
    for (int k = 0; k < 64; ++k) {
        const double x = unit(rng), t = unit(rng);
        const double g1 = p.interface_forcing[0](x, t), g2 = p.interface_forcing[1](x, t);
        gsum = std::max(gsum, std::abs(g1 + g2));
        gmax = std::max({gmax, std::abs(g1), std::abs(g2)});
    }
    if (gmax == 0.0) {
        p.interface_forcing = {};
        p.interface_forcing_kind = InterfaceForcing::zero;
    } else {
        p.interface_forcing_kind = gsum <= 1e-13 * gmax ? InterfaceForcing::antisymmetric : InterfaceForcing::general;
    }

    // Residuals of the model equations evaluated with automatic derivatives.
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const double x = unit(rng), t = unit(rng);
        for (int i = 0; i < 2; ++i) {
            const double y = i == 0 ? unit(rng) : -unit(rng);
            const Derivatives d = derivatives(sol, i, x, y, t);
            const auto vel = base.advection[i].velocity(x, y);
            const double pde = d.ut - base.nu[i] * (d.uxx + d.uyy) + vel[0] * d.ux + vel[1] * d.uy +
                               base.advection[i].divergence(x, y) * d.u - p.body_forcing[i](x, y, t);
            const Derivatives dg = derivatives(sol, i, x, 0.0, t);
            const double normal = i == 0 ? -1.0 : 1.0;
            const double u1 = derivatives(sol, 0, x, 0.0, t).u;
            const double u2 = derivatives(sol, 1, x, 0.0, t).u;
            const double robin = -base.nu[i] * normal * dg.uy - (B(i, 0) * u1 + B(i, 1) * u2 - p.interface_forcing[i](x, t));
            const double far = derivatives(sol, i, x, i == 0 ? 1.0 : -1.0, t).u;
            const double side = derivatives(sol, i, 0.0, y, t).u + derivatives(sol, i, 1.0, y, t).u;
            worst = std::max({worst, std::abs(pde), std::abs(robin), std::abs(far), std::abs(side)});
        }
    }
    mc.residual = worst;
    if (!(worst <= 1e-10)) {
        throw Error("manufactured solution '" + name + "' fails its residual check (" + std::to_string(worst) + ")");
    }
    return mc;
}

Eigen::VectorXd interpolate(const Mesh& mesh, const SpaceFn& fn) {
    Eigen::VectorXd v(mesh.dof_count());
    for (int d = 0; d < mesh.dof_count(); ++d) {
        const auto& p = mesh.nodes[mesh.node_of_dof[d]];
        v(d) = fn(p[0], p[1]);
    }
    return v;
}

void apply_discrete_manufactured(FeOperators& ops, const std::array<Eigen::VectorXd, 2>& w,
                                 std::function<double(double)> a, std::function<double(double)> a_dot) {
    for (int i = 0; i < 2; ++i) {
        if (w[i].size() != ops.sub[i].dofs()) throw StructuralError("apply_discrete_manufactured: size mismatch");
    }
    std::array<Eigen::VectorXd, 2> Mw, Kw;
    for (int i = 0; i < 2; ++i) {
        Mw[i] = ops.sub[i].mass * w[i];
        Kw[i] = ops.sub[i].op * w[i];
        for (int j = 0; j < 2; ++j) {
            if (ops.interface_dofs() == 0) continue;
            Kw[i] += ops.coupling(i, j) *
                     (ops.sub[i].trace.transpose() * (ops.interface_mass * (ops.sub[j].trace * w[j])));
        }
    }
    for (int i = 0; i < 2; ++i) {
        ops.sub[i].body_load = [m = Mw[i], k = Kw[i], a, a_dot](double t) -> Eigen::VectorXd {
            return a_dot(t) * m + a(t) * k;
        };
        ops.sub[i].initial = a(0.0) * w[i];
        ops.interface_load[i] = {};
    }
    ops.interface_forcing = InterfaceForcing::zero;
}

ManufacturedProblem build_manufactured_problem(const std::string& name, const ProblemSpec& base, int nx, int ny,
                                               bool consistent_initial) {
    ManufacturedProblem mp{build_mesh(1, nx, ny), build_mesh(2, nx, ny), {}, manufactured_case(name, base), {}};
    mp.map = match_interfaces(mp.mesh1, mp.mesh2);
    mp.ops = assemble(mp.mesh1, mp.mesh2, mp.map, mp.mms.problem);
    const SeparableSolution s = mp.mms.solution;
    if (mp.mms.discrete) {
        std::array<Eigen::VectorXd, 2> w;
        for (int i = 0; i < 2; ++i) {
            w[i] = interpolate(i == 0 ? mp.mesh1 : mp.mesh2,
                               [s, i](double x, double y) { return std::sin(pi * x) * s.y_profile(i, y); });
        }
        apply_discrete_manufactured(mp.ops, w, [s](double t) { return s.a(t); },
                                    [s](double t) { return s.a_dot(t); });
    } else if (consistent_initial) {
        const GlobalSystem g = global_system(mp.ops);
        const double rate = s.a_dot(0.0) / s.a(0.0);
        Eigen::SparseLU<SparseMatrix> lu(g.K);
        if (lu.info() != Eigen::Success) throw SolverError("consistent initial state: K is singular");
        const Eigen::VectorXd u0 = lu.solve(g.load(0.0) - rate * (g.M * g.initial));
        mp.ops.sub[0].initial = u0.head(g.dofs[0]);
        mp.ops.sub[1].initial = u0.tail(g.dofs[1]);
    }
    return mp;
}

// ---------------------------------------------------------------------------

GlobalSystem global_system(const FeOperators& ops) {
    GlobalSystem g;
    g.dofs = {ops.sub[0].dofs(), ops.sub[1].dofs()};
    g.M = block_diag(ops.sub[0].mass, ops.sub[1].mass);
    SparseMatrix K = block_diag(ops.sub[0].op, ops.sub[1].op);
    if (ops.interface_dofs() > 0) {
        Triplets t;
        const std::array<int, 2> off{0, g.dofs[0]};
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const double b = ops.coupling(i, j);
                if (b == 0.0) continue;
                const SparseMatrix blk =
                    b * SparseMatrix(ops.sub[i].trace.transpose() * ops.interface_mass * ops.sub[j].trace);
                for (int k = 0; k < blk.outerSize(); ++k)
                    for (SparseMatrix::InnerIterator it(blk, k); it; ++it)
                        t.emplace_back(off[i] + it.row(), off[j] + it.col(), it.value());
            }
        }
        SparseMatrix C(K.rows(), K.cols());
        C.setFromTriplets(t.begin(), t.end());
        K += C;
    }
    g.K = K;
    g.initial.resize(g.dofs[0] + g.dofs[1]);
    g.initial << ops.sub[0].initial, ops.sub[1].initial;
    const FeOperators* p = &ops;
    const std::array<SparseMatrix, 2> tt{SparseMatrix(ops.sub[0].trace.transpose()),
                                         SparseMatrix(ops.sub[1].trace.transpose())};
    const std::array<int, 2> dofs = g.dofs;
    if (ops.has_forcing()) {
        // Loads are evaluated through the operators; the caller keeps them alive.
        g.load = [p, tt, dofs](double t) {
            Eigen::VectorXd b(dofs[0] + dofs[1]);
            for (int i = 0; i < 2; ++i) {
                Eigen::VectorXd part = p->sub[i].body_load_at(t);
                if (p->interface_load[i]) part += tt[i] * p->interface_load[i](t);
                b.segment(i == 0 ? 0 : dofs[0], dofs[i]) = part;
            }
            return b;
        };
    }
    return g;
}

SubdomainOperators as_single_domain(const GlobalSystem& g) {
    SubdomainOperators s;
    const int n = static_cast<int>(g.M.rows());
    s.mass = g.M;
    s.diffusion = g.K;
    s.advection.resize(n, n);
    s.op = g.K;
    s.trace.resize(0, n);
    s.initial = g.initial;
    s.body_load = g.load;
    return s;
}

// ---------------------------------------------------------------------------

ReferenceTrajectory::ReferenceTrajectory(const FeOperators& ops, double t_f, int n_steps, ReferenceMethod method)
    : ops_(&ops), t_f_(t_f), n_steps_(n_steps), method_(method) {
    if (!(t_f > 0.0) || n_steps < 1) throw StructuralError("reference solve: need t_f > 0 and n_steps >= 1");
    const GlobalSystem g = global_system(ops);
    dofs_ = g.dofs;
    const int n = static_cast<int>(g.M.rows());
    const double dt = t_f / n_steps;
    if (ops.interface_dofs() > 0) interface_mass_llt_.compute(Eigen::MatrixXd(ops.interface_mass));
    auto load = [&](double t) -> Eigen::VectorXd { return g.load ? g.load(t) : Eigen::VectorXd::Zero(n); };

    nodes_.reserve(n_steps + 1);
    nodes_.push_back(g.initial);
    if (n == 0) {
        for (int k = 0; k < n_steps; ++k) nodes_.push_back(g.initial);
        if (method == ReferenceMethod::radau_iia) stages_.assign(n_steps, Eigen::MatrixXd(0, 3));
        return;
    }
    if (method == ReferenceMethod::crank_nicolson) {
        SparseMatrix lhs = g.M + (0.5 * dt) * g.K;
        const SparseMatrix rhs = g.M - (0.5 * dt) * g.K;
        Eigen::SparseLU<SparseMatrix> lu(lhs);
        if (lu.info() != Eigen::Success) throw SolverError("reference solve: CN matrix is singular");
        Eigen::VectorXd b_prev = load(0.0);
        for (int k = 0; k < n_steps; ++k) {
            const Eigen::VectorXd b_next = load(t_f * (k + 1) / n_steps);
            nodes_.push_back(lu.solve(rhs * nodes_.back() + (0.5 * dt) * (b_prev + b_next)));
            b_prev = b_next;
        }
        return;
    }

    // Three-stage Radau IIA, order 5, stage order 3.
    const double s6 = std::sqrt(6.0);
    const std::array<double, 3> c{(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0};
    const double A[3][3] = {{(88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0},
                            {(296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0},
                            {(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0}};
    Triplets t;
    for (int s = 0; s < 3; ++s) {
        for (int k = 0; k < g.M.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(g.M, k); it; ++it)
                t.emplace_back(s * n + it.row(), s * n + it.col(), it.value());
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < g.K.outerSize(); ++k)
                for (SparseMatrix::InnerIterator it(g.K, k); it; ++it)
                    t.emplace_back(s * n + it.row(), j * n + it.col(), dt * A[s][j] * it.value());
    }
    SparseMatrix S(3 * n, 3 * n);
    S.setFromTriplets(t.begin(), t.end());
    Eigen::SparseLU<SparseMatrix> lu(S);
    if (lu.info() != Eigen::Success) throw SolverError("reference solve: Radau stage matrix is singular");
    stages_.reserve(n_steps);
    Eigen::VectorXd rhs(3 * n);
    for (int k = 0; k < n_steps; ++k) {
        const double t0 = t_f * k / n_steps;
        const Eigen::VectorXd Mu = g.M * nodes_.back();
        std::array<Eigen::VectorXd, 3> b;
        for (int j = 0; j < 3; ++j) b[j] = load(t0 + c[j] * dt);
        for (int s = 0; s < 3; ++s) {
            Eigen::VectorXd seg = Mu;
            for (int j = 0; j < 3; ++j) seg += dt * A[s][j] * b[j];
            rhs.segment(s * n, n) = seg;
        }
        const Eigen::VectorXd Y = lu.solve(rhs);
        Eigen::MatrixXd st(n, 3);
        for (int s = 0; s < 3; ++s) st.col(s) = Y.segment(s * n, n);
        stages_.push_back(st);
        nodes_.push_back(st.col(2));
    }
}

Eigen::VectorXd ReferenceTrajectory::operator()(double t) const {
    const double dt = step();
    int k = static_cast<int>(std::floor(t / dt));
    k = std::clamp(k, 0, n_steps_ - 1);
    const double tau = (t - t_f_ * k / n_steps_) / dt;
    if (method_ == ReferenceMethod::crank_nicolson) return (1.0 - tau) * nodes_[k] + tau * nodes_[k + 1];
    const double s6 = std::sqrt(6.0);
    const std::array<double, 4> x{0.0, (4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0};
    std::array<double, 4> w{};
    for (int a = 0; a < 4; ++a) {
        w[a] = 1.0;
        for (int b = 0; b < 4; ++b)
            if (b != a) w[a] *= (tau - x[b]) / (x[a] - x[b]);
    }
    Eigen::VectorXd out = w[0] * nodes_[k];
    for (int s = 0; s < 3; ++s) out += w[s + 1] * stages_[k].col(s);
    return out;
}

Eigen::VectorXd ReferenceTrajectory::subdomain(int i, double t) const {
    const Eigen::VectorXd u = (*this)(t);
    return i == 0 ? Eigen::VectorXd(u.head(dofs_[0])) : Eigen::VectorXd(u.tail(dofs_[1]));
}

Eigen::VectorXd ReferenceTrajectory::flux(int i, double t) const {
    const FeOperators& ops = *ops_;
    const Eigen::VectorXd u = (*this)(t);
    Eigen::VectorXd F = Eigen::VectorXd::Zero(ops.interface_dofs());
    if (F.size() == 0) return F;
    F += ops.coupling(i, 0) * (ops.sub[0].trace * u.head(dofs_[0]));
    F += ops.coupling(i, 1) * (ops.sub[1].trace * u.tail(dofs_[1]));
    if (ops.interface_load[i]) F -= interface_mass_llt_.solve(ops.interface_load[i](t));
    return F;
}

ReferenceTrajectory reference_solve(const FeOperators& ops, double t_f, ReferenceMethod method, int n_steps) {
    if (n_steps <= 0) {
        const int per_unit = method == ReferenceMethod::radau_iia ? 512 : 4096;
        n_steps = std::max(1, static_cast<int>(std::ceil(per_unit * t_f)));
    }
    return ReferenceTrajectory(ops, t_f, n_steps, method);
}

double reference_drift(const FeOperators& ops, double t_f, ReferenceMethod method, int n_steps) {
    const ReferenceTrajectory coarse = reference_solve(ops, t_f, method, n_steps);
    const ReferenceTrajectory fine = reference_solve(ops, t_f, method, 2 * coarse.steps());
    const GlobalSystem g = global_system(ops);
    double worst = 0.0;
    for (int k = 0; k <= 64; ++k) {
        const double t = t_f * k / 64.0;
        const Eigen::VectorXd e = coarse(t) - fine(t);
        worst = std::max(worst, std::sqrt(e.dot(g.M * e)));
    }
    return worst;
}

// ---------------------------------------------------------------------------

double ErrorReport::l2_total() const { return std::hypot(l2[0], l2[1]); }

double ErrorReport::sync_max() const {
    double m = 0.0;
    for (double e : sync) m = std::max(m, e);
    return m;
}

ErrorReport error_norms(const Trajectory& traj, const ReferenceTrajectory& oracle, const FeOperators& ops) {
    if (traj.cfg.t_f > oracle.t_f() * (1.0 + 1e-12)) {
        throw PreconditionError("error_norms: oracle ends before the trajectory");
    }
    ErrorReport rep;
    const double h = oracle.step();
    const GaussRule rule = gauss_rule(5);
    std::array<double, 2> l2sq{0.0, 0.0}, fluxsq{0.0, 0.0};

    // Integrates fn over (a, b), split at the oracle step nodes.
    auto integrate = [&](double a, double b, const std::function<double(double)>& fn) {
        double total = 0.0;
        double lo = a;
        while (lo < b) {
            const double next_node = (std::floor(lo / h + 1e-9) + 1.0) * h;
            const double hi = std::min(b, next_node);
            if (hi - lo > 1e-15 * std::max(1.0, std::abs(b))) {
                for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
                    const double t = lo + 0.5 * (rule.nodes[g] + 1.0) * (hi - lo);
                    total += 0.5 * (hi - lo) * rule.weights[g] * fn(t);
                }
            }
            lo = hi;
        }
        return total;
    };

    for (const WindowSolution& w : traj.windows) {
        double window_sq = 0.0;
        for (int i = 0; i < 2; ++i) {
            const SparseMatrix& M = ops.sub[i].mass;
            for (std::size_t n = 0; n < w.substeps[i].size(); ++n) {
                const TimePoly& u = w.substeps[i][n];
                const double sq = integrate(u.interval().a(), u.interval().b(), [&](double t) {
                    const Eigen::VectorXd e = oracle.subdomain(i, t) - u(t);
                    return e.dot(M * e);
                });
                l2sq[i] += sq;
                window_sq += sq;
                const Eigen::VectorXd e = oracle.subdomain(i, u.interval().b()) - w.sides[i][n + 1];
                rep.nodal[i] = std::max(rep.nodal[i], std::sqrt(e.dot(M * e)));
            }
            if (ops.interface_dofs() > 0 && w.flux.size() == 2) {
                const TimePoly& F = w.flux[i];
                fluxsq[i] += integrate(w.t0, w.t1, [&](double t) {
                    const Eigen::VectorXd e = oracle.flux(i, t) - F(t);
                    return e.dot(ops.interface_mass * e);
                });
            }
        }
        rep.window_squares.push_back(window_sq);
        double sync_sq = 0.0;
        for (int i = 0; i < 2; ++i) {
            const Eigen::VectorXd e = oracle.subdomain(i, w.t1) - w.sides[i].back();
            sync_sq += e.dot(ops.sub[i].mass * e);
        }
        rep.sync.push_back(std::sqrt(sync_sq));
    }
    for (int i = 0; i < 2; ++i) {
        rep.l2[i] = std::sqrt(l2sq[i]);
        rep.flux_l2[i] = std::sqrt(fluxsq[i]);
    }
    return rep;
}

double fitted_rate(const std::vector<double>& dt, const std::vector<double>& err) {
    if (dt.size() != err.size() || dt.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(dt.size());
    for (std::size_t k = 0; k < dt.size(); ++k) {
        const double x = std::log(dt[k]), y = std::log(err[k]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void RateTable::write_csv(std::ostream& os) const {
    os << "level,dt,dt1,dt2,err_l2_u1,err_l2_u2,err_sync,rate_running\n";
    char buf[512];
    for (const RateRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.level, r.dt, r.dt1, r.dt2,
                      r.err_l2_u1, r.err_l2_u2, r.err_sync, r.rate_running);
        os << buf;
    }
}

RateTable convergence_study(const FeOperators& ops, const SchemeSpec& spec, const WindowConfig& base, int levels,
                            ErrorTarget target, const ReferenceTrajectory& oracle, const SimulationOptions& options,
                            int jobs) {
    if (levels < 3) throw StructuralError("convergence_study: at least 3 levels are required");
    base.validate();
    auto run_level = [&](int k) {
        WindowConfig cfg = base;
        cfg.N = base.N << k;
        cfg.N0 = base.N0 == 1 ? 1 : ((base.N0 - 1) << k) + 1;
        const Trajectory traj = run_simulation(ops, spec, cfg, options);
        const ErrorReport rep = error_norms(traj, oracle, ops);
        RateRow row;
        row.level = k;
        row.dt = cfg.dt();
        row.dt1 = cfg.dt_sub(0);
        row.dt2 = cfg.dt_sub(1);
        row.err_l2_u1 = rep.l2[0];
        row.err_l2_u2 = rep.l2[1];
        row.err_sync = rep.sync_max();
        spdlog::info("convergence level {}: dt = {:.4g}, L2 = {:.4e}, sync = {:.4e}", k, row.dt, rep.l2_total(),
                     row.err_sync);
        return row;
    };

    RateTable table;
    table.target = target;
    table.rows.resize(levels);
    jobs = std::max(1, jobs);
    for (int start = 0; start < levels; start += jobs) {
        std::vector<std::future<RateRow>> batch;
        for (int k = start; k < std::min(levels, start + jobs); ++k) {
            batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, run_level, k));
        }
        for (std::size_t b = 0; b < batch.size(); ++b) table.rows[start + b] = batch[b].get();
    }

    auto error_of = [&](const RateRow& r) {
        return target == ErrorTarget::l2 ? std::hypot(r.err_l2_u1, r.err_l2_u2) : r.err_sync;
    };
    std::vector<double> dts, errs;
    const RateRow* prev = nullptr;
    for (RateRow& r : table.rows) {
        r.rate_running = std::numeric_limits<double>::quiet_NaN();
        const double e = error_of(r);
        if (!(e >= 1e-12)) {
            r.excluded = true;
            table.notes.push_back("level " + std::to_string(r.level) + " excluded: error " + std::to_string(e) +
                                  " is under the 1e-12 roundoff floor");
            continue;
        }
        if (prev) r.rate_running = std::log(error_of(*prev) / e) / std::log(prev->dt / r.dt);
        dts.push_back(r.dt);
        errs.push_back(e);
        prev = &r;
    }
    table.rate = fitted_rate(dts, errs);
    return table;
}

EnergyReport energy_report(const Trajectory& traj) {
    EnergyReport rep;
    for (const WindowRecord& r : traj.records) rep.energies.push_back(r.energy_1 + r.energy_2);
    if (rep.energies.empty()) return rep;
    const double tol = 1e-12 * rep.energies.front();
    for (std::size_t k = 1; k < rep.energies.size(); ++k) {
        const double inc = rep.energies[k] - rep.energies[k - 1];
        rep.max_increase = std::max(rep.max_increase, inc);
        if (inc > tol) rep.monotone = false;
    }
    return rep;
}

}  // namespace mrcouple
