#include "mrcouple/coupling.hpp"

#include "mrcouple/error.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/SparseCholesky>

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

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

SparseMatrix from_triplets(int rows, int cols, const Triplets& t) {
    SparseMatrix A(rows, cols);
    A.setFromTriplets(t.begin(), t.end());
    A.makeCompressed();
    return A;
}

/// (g_i, psi_p mu)_Gamma integrated over the window, summed over the M substeps.
Eigen::MatrixXd g_moments(const LoadFunction& load, int dg, const Interval& window, int r, int M,
                          TimeQuadrature mode) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dg, r + 1);
    if (!load) return out;
    for (int n = 1; n <= M; ++n) {
        const Interval sub(window.a() + window.length() * (n - 1) / M, window.a() + window.length() * n / M);
        out += load_moments(load, dg, sub, window, r, mode);
    }
    return out;
}

Eigen::MatrixXd solve_interface_mass(const SparseMatrix& M_gamma, const Eigen::MatrixXd& rhs) {
    if (rhs.rows() == 0) return rhs;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(M_gamma);
    if (ldlt.info() != Eigen::Success) throw SolverError("interface mass matrix is not factorizable");
    return ldlt.solve(rhs);
}

double max_abs(const Eigen::MatrixXd& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

bool interface_forcing_zero(const FeOperators& ops) {
    return ops.interface_forcing == InterfaceForcing::zero && !ops.interface_load[0] && !ops.interface_load[1];
}

template <class Fn>
auto with_window_context(int w, Fn&& fn) -> decltype(fn()) {
    const std::string prefix = "window " + std::to_string(w) + ": ";
    try {
        return fn();
    } catch (const ContractionError& e) {
        throw ContractionError(prefix + e.what(), e.step_restriction_ratio(), e.contraction_factor(),
                               e.iterations());
    } catch (const SolverError& e) {
        throw SolverError(prefix + e.what(), e.pivot());
    } catch (const PreconditionError& e) {
        throw PreconditionError(prefix + e.what());
    } catch (const StructuralError& e) {
        throw StructuralError(prefix + e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------------------

void WindowConfig::validate() const {
    if (!(t_f > 0.0) || !std::isfinite(t_f)) throw StructuralError("WindowConfig: t_f must be positive");
    if (N < 1) throw StructuralError("WindowConfig: N must be >= 1");
    for (int i = 0; i < 2; ++i) {
        if (M[i] < 1) throw StructuralError("WindowConfig: M" + std::to_string(i + 1) + " must be >= 1");
        if (r[i] < 0) throw StructuralError("WindowConfig: r" + std::to_string(i + 1) + " must be >= 0");
    }
    if (N0 < 1) throw StructuralError("WindowConfig: N0 must be >= 1");
}

Interval WindowConfig::window(int n) const {
    if (n < 1 || n > N) throw StructuralError("WindowConfig: window index out of range");
    return {sync_time(n - 1), sync_time(n)};
}

Interval WindowConfig::substep(int i, int w, int n) const {
    const Interval W = window(w);
    const double len = W.b() - W.a();
    const double a = n == 1 ? W.a() : W.a() + len * (n - 1) / M[i];
    const double b = n == M[i] ? W.b() : W.a() + len * n / M[i];
    return {a, b};
}

TimePoly trace_projection(std::span<const TimePoly> traces, const Interval& window, int r, TimeQuadrature mode) {
    if (traces.empty()) throw StructuralError("trace_projection: no substep traces");
    if (r < 0) throw StructuralError("trace_projection: r must be >= 0");
    const double tol = 1e-12 * std::max(1.0, window.length());
    if (std::abs(traces.front().interval().a() - window.a()) > tol ||
        std::abs(traces.back().interval().b() - window.b()) > tol) {
        throw StructuralError("trace_projection: substeps do not tile the window");
    }
    if (mode == TimeQuadrature::exact) {
        TimePoly p = project_l2_broken(traces, r);
        return TimePoly(window, p.coeffs());
    }
    const int dim = traces.front().dim();
    Eigen::MatrixXd coeffs = Eigen::MatrixXd::Zero(r + 1, dim);
    for (std::size_t n = 0; n < traces.size(); ++n) {
        const Interval& I = traces[n].interval();
        if (n > 0 && std::abs(I.a() - traces[n - 1].interval().b()) > tol) {
            throw StructuralError("trace_projection: substeps are not contiguous");
        }
        const Eigen::VectorXd mid = 0.5 * (traces[n](I.a()) + traces[n](I.b()));
        const double xa = window.to_reference(I.a());
        const double xb = window.to_reference(I.b());
        for (int p = 0; p <= r; ++p) {
            coeffs.row(p) += I.length() * 0.5 * (legendre_eval(p, xa) + legendre_eval(p, xb)) * mid.transpose();
        }
    }
    for (int p = 0; p <= r; ++p) coeffs.row(p) *= (2.0 * p + 1.0) / window.length();
    return TimePoly(window, coeffs);
}

std::array<TimePoly, 2> flux_solve(const TimePoly& u_gamma1, const TimePoly& u_gamma2, const InterfaceData& data,
                                   std::array<int, 2> r, std::array<int, 2> M, TimeQuadrature mode) {
    const Interval& W = u_gamma1.interval();
    if (std::abs(W.a() - u_gamma2.interval().a()) > 1e-12 || std::abs(W.b() - u_gamma2.interval().b()) > 1e-12) {
        throw StructuralError("flux_solve: traces live on different windows");
    }
    if (u_gamma1.dim() != u_gamma2.dim()) throw StructuralError("flux_solve: trace dimensions differ");
    const int dg = u_gamma1.dim();
    const std::array<const TimePoly*, 2> u{&u_gamma1, &u_gamma2};
    std::vector<TimePoly> out;
    for (int i = 0; i < 2; ++i) {
        if (r[i] < 0) throw StructuralError("flux_solve: r must be >= 0");
        Eigen::MatrixXd coeffs = Eigen::MatrixXd::Zero(r[i] + 1, dg);
        for (int j = 0; j < 2; ++j) {
            const int top = std::min(r[i], u[j]->order());
            coeffs.topRows(top + 1) += data.coupling(i, j) * u[j]->coeffs().topRows(top + 1);
        }
        const Eigen::MatrixXd G = g_moments(data.load[i], dg, W, r[i], M[i], mode);
        if (data.load[i] && dg > 0) {
            const Eigen::MatrixXd g = solve_interface_mass(data.interface_mass, G);
            for (int p = 0; p <= r[i]; ++p) {
                coeffs.row(p) -= ((2.0 * p + 1.0) / W.length()) * g.col(p).transpose();
            }
        }
        out.emplace_back(W, coeffs);
    }
    return {out[0], out[1]};
}

// ---------------------------------------------------------------------------

WindowSystem::WindowSystem(const FeOperators& ops, const SchemeSpec& spec, const WindowConfig& cfg,
                           QuadratureFlags flags)
    : ops_(&ops), spec_(spec), cfg_(cfg), flags_(flags) {
    cfg_.validate();
    const int q = spec_.q();
    sub_offset_[0] = 0;
    sub_offset_[1] = cfg_.M[0] * (q + 2) * ops.sub[0].dofs();
    flux_offset_[0] = sub_offset_[1] + cfg_.M[1] * (q + 2) * ops.sub[1].dofs();
    flux_offset_[1] = flux_offset_[0] + (cfg_.r[0] + 1) * ops.interface_dofs();
    size_ = flux_offset_[1] + (cfg_.r[1] + 1) * ops.interface_dofs();
}

int WindowSystem::substep_offset(int i, int n) const {
    return sub_offset_[i] + (n - 1) * (spec_.q() + 2) * ops_->sub[i].dofs();
}

void WindowSystem::assemble(int w, const History& incoming) {
    const FeOperators& ops = *ops_;
    const Interval W = cfg_.window(w);
    window_ = w;
    const int q = spec_.q();
    const int dg = ops.interface_dofs();
    const int nu = flux_offset_[0];
    const int nf = size_ - nu;

    Triplets uu_mass, uu_stiff, uf, fu, ff;
    rhs_ = Eigen::VectorXd::Zero(size_);

    for (int i = 0; i < 2; ++i) {
        const int d = ops.sub[i].dofs();
        const int need = std::max(1, spec_.reach_back());
        if (static_cast<int>(incoming[i].size()) < need) {
            throw StructuralError("WindowSystem: subdomain " + std::to_string(i + 1) + " needs " +
                                  std::to_string(need) + " incoming side values");
        }
        for (int n = 1; n <= cfg_.M[i]; ++n) {
            const SubstepBlock block = assemble_substep(ops.sub[i], ops.interface_mass, spec_, cfg_.substep(i, w, n),
                                                        cfg_.r[i], W, flags_, i + 1, n);
            const int o = substep_offset(i, n);
            add_block(uu_mass, block.mass_part, 1.0, o, o);
            add_block(uu_stiff, block.stiffness_part, 1.0, o, o);
            for (std::size_t l = 1; l <= block.history.size(); ++l) {
                const int src = n - static_cast<int>(l);
                if (src >= 1) {
                    add_block(uu_mass, block.history[l - 1], 1.0, o, substep_offset(i, src) + (q + 1) * d);
                } else {
                    const std::size_t back = static_cast<std::size_t>(-src);
                    if (back >= incoming[i].size()) {
                        throw StructuralError("WindowSystem: missing side value U^" + std::to_string(src) +
                                              " of subdomain " + std::to_string(i + 1));
                    }
                    rhs_.segment(o, block.rows()) -= block.history[l - 1] * incoming[i][back];
                }
            }
            add_block(uf, block.flux, 1.0, o, flux_offset_[i] - nu);
            rhs_.segment(o, block.rows()) += block.load;
        }
    }

    // Flux rows: int (F_i, psi_p mu) = sum_j b_ij int (u_Gamma,j, psi_p mu) - int (g_i, psi_p mu).
    const std::array<SparseMatrix, 2> mt{SparseMatrix(ops.interface_mass * ops.sub[0].trace),
                                         SparseMatrix(ops.interface_mass * ops.sub[1].trace)};
    for (int i = 0; i < 2; ++i) {
        const int row0 = flux_offset_[i] - nu;
        for (int p = 0; p <= cfg_.r[i]; ++p) {
            add_block(ff, ops.interface_mass, W.length() / (2.0 * p + 1.0), row0 + p * dg, row0 + p * dg);
        }
        for (int j = 0; j < 2; ++j) {
            const double b = ops.coupling(i, j);
            if (b == 0.0) continue;
            const int d = ops.sub[j].dofs();
            for (int n = 1; n <= cfg_.M[j]; ++n) {
                const Eigen::MatrixXd X = cross_gram(cfg_.substep(j, w, n), W, q, cfg_.r[i], flags_.coupling);
                const int o = substep_offset(j, n);
                for (int p = 0; p <= std::min(cfg_.r[i], cfg_.r[j]); ++p) {
                    for (int m = 0; m <= q; ++m) add_block(fu, mt[j], -b * X(m, p), row0 + p * dg, o + m * d);
                }
            }
        }
        const Eigen::MatrixXd G = g_moments(ops.interface_load[i], dg, W, cfg_.r[i], cfg_.M[i], flags_.load);
        for (int p = 0; p <= cfg_.r[i]; ++p) rhs_.segment(flux_offset_[i] + p * dg, dg) = -G.col(p);
    }

    uu_mass_ = from_triplets(nu, nu, uu_mass);
    uu_stiff_ = from_triplets(nu, nu, uu_stiff);
    uf_ = from_triplets(nu, nf, uf);
    fu_ = from_triplets(nf, nu, fu);
    ff_ = from_triplets(nf, nf, ff);

    Triplets all;
    all.reserve(uu_mass.size() + uu_stiff.size() + uf.size() + fu.size() + ff.size());
    all.insert(all.end(), uu_mass.begin(), uu_mass.end());
    all.insert(all.end(), uu_stiff.begin(), uu_stiff.end());
    for (const auto& t : uf) all.emplace_back(t.row(), t.col() + nu, t.value());
    for (const auto& t : fu) all.emplace_back(t.row() + nu, t.col(), t.value());
    for (const auto& t : ff) all.emplace_back(t.row() + nu, t.col() + nu, t.value());
    matrix_ = from_triplets(size_, size_, all);
}

WindowSolution WindowSystem::unpack(const Eigen::VectorXd& x, const History& incoming) const {
    if (x.size() != size_) throw StructuralError("WindowSystem::unpack: vector size mismatch");
    const FeOperators& ops = *ops_;
    const int q = spec_.q();
    const int dg = ops.interface_dofs();
    WindowSolution sol;
    sol.index = window_;
    const Interval W = cfg_.window(window_);
    sol.t0 = W.a();
    sol.t1 = W.b();
    for (int i = 0; i < 2; ++i) {
        const int d = ops.sub[i].dofs();
        sol.sides[i].push_back(incoming[i].at(0));
        std::vector<TimePoly> traces;
        for (int n = 1; n <= cfg_.M[i]; ++n) {
            const int o = substep_offset(i, n);
            Eigen::MatrixXd coeffs(q + 1, d);
            for (int m = 0; m <= q; ++m) coeffs.row(m) = x.segment(o + m * d, d).transpose();
            const Interval I = cfg_.substep(i, window_, n);
            sol.substeps[i].emplace_back(I, coeffs);
            sol.sides[i].push_back(x.segment(o + (q + 1) * d, d));
            traces.emplace_back(I, Eigen::MatrixXd(coeffs * ops.sub[i].trace.transpose()));
        }
        sol.trace.push_back(trace_projection(traces, W, cfg_.r[i], flags_.coupling));
        Eigen::MatrixXd fc(cfg_.r[i] + 1, dg);
        for (int p = 0; p <= cfg_.r[i]; ++p) fc.row(p) = x.segment(flux_offset_[i] + p * dg, dg).transpose();
        sol.flux.emplace_back(W, fc);
    }
    return sol;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd DirectWindowSolver::solve(const WindowSystem& system) {
    const SparseMatrix& A = system.matrix();
    const Eigen::VectorXd& b = system.rhs();
    if (A.rows() == 0) return Eigen::VectorXd();
    const bool reuse = lu_ && cached_.rows() == A.rows() && cached_.nonZeros() == A.nonZeros() &&
                       (cached_ - A).norm() == 0.0;
    if (!reuse) {
        cached_ = A;
        lu_ = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
        lu_->compute(cached_);
        if (lu_->info() != Eigen::Success) {
            const std::string msg = lu_->lastErrorMessage();
            long pivot = -1;
            // Eigen reports "THE MATRIX IS STRUCTURALLY SINGULAR ... ZERO COLUMN AT k" style messages.
            const auto pos = msg.find_last_of(' ');
            if (pos != std::string::npos) {
                try {
                    pivot = std::stol(msg.substr(pos + 1));
                } catch (...) {
                }
            }
            lu_.reset();
            throw SolverError("window factorization failed: " + msg, pivot);
        }
    }
    Eigen::VectorXd x = lu_->solve(b);
    const double bn = b.norm();
    const double rel = bn > 0.0 ? (A * x - b).norm() / bn : (A * x).norm();
    if (!std::isfinite(rel) || rel > 1e-10) {
        throw SolverError("window solve: relative residual " + std::to_string(rel) + " exceeds 1e-10");
    }
    return x;
}

WindowSolution solve_window_direct(const WindowSystem& system, const History& incoming) {
    DirectWindowSolver solver;
    const Eigen::VectorXd x = solver.solve(system);
    WindowSolution sol = system.unpack(x, incoming);
    const double bn = system.rhs().norm();
    sol.diagnostics = {"direct", bn > 0.0 ? (system.matrix() * x - system.rhs()).norm() / bn : 0.0, 1};
    return sol;
}

WindowSolution solve_window_fixed_point(const WindowSystem& system, const History& incoming, double tol,
                                        int max_iter, const std::vector<TimePoly>& flux_guess) {
    if (!(tol > 0.0)) throw StructuralError("solve_window_fixed_point: tol must be positive");
    if (max_iter < 1) throw StructuralError("solve_window_fixed_point: max_iter must be >= 1");
    const FeOperators& ops = system.operators();
    const WindowConfig& cfg = system.config();
    const int q = system.scheme().q();
    const int nu = system.substep_unknowns();
    const int dg = ops.interface_dofs();
    const double ratio = step_restriction_ratio(cfg, ops.h);
    spdlog::debug("fixed point: step restriction ratio dt(h^-2 + h^-1) = {:.3g}", ratio);

    Eigen::SparseLU<SparseMatrix> mass_lu;
    if (nu > 0) {
        mass_lu.compute(system.substep_mass());
        if (mass_lu.info() != Eigen::Success) throw SolverError("fixed point: substep mass system is singular");
    }
    Eigen::SparseLU<SparseMatrix> flux_lu;
    const int nf = system.size() - nu;
    if (nf > 0) {
        flux_lu.compute(system.flux_flux());
        if (flux_lu.info() != Eigen::Success) throw SolverError("fixed point: flux mass system is singular");
    }
    const Eigen::VectorXd bu = system.rhs().head(nu);
    const Eigen::VectorXd bf = system.rhs().tail(nf);

    Eigen::VectorXd xu = Eigen::VectorXd::Zero(nu);
    for (int i = 0; i < 2; ++i) {
        const int d = ops.sub[i].dofs();
        for (int n = 1; n <= cfg.M[i]; ++n) {
            const int o = system.substep_offset(i, n);
            xu.segment(o, d) = incoming[i].at(0);
            xu.segment(o + (q + 1) * d, d) = incoming[i].at(0);
        }
    }
    Eigen::VectorXd xf = Eigen::VectorXd::Zero(nf);
    for (int i = 0; i < 2 && flux_guess.size() == 2; ++i) {
        const TimePoly guess = flux_guess[i].with_order(cfg.r[i]);
        if (guess.dim() != dg) continue;
        for (int p = 0; p <= cfg.r[i]; ++p) {
            xf.segment(system.flux_offset(i) - nu + p * dg, dg) = guess.coeffs().row(p).transpose();
        }
    }

    auto composite_norm2 = [&](const Eigen::VectorXd& du) {
        double total = 0.0;
        for (int i = 0; i < 2; ++i) {
            const int d = ops.sub[i].dofs();
            const double dt = cfg.dt_sub(i);
            const SparseMatrix& M = ops.sub[i].mass;
            for (int n = 1; n <= cfg.M[i]; ++n) {
                const int o = system.substep_offset(i, n);
                for (int j = 0; j <= q + 1; ++j) {
                    const Eigen::VectorXd v = du.segment(o + j * d, d);
                    const double w = j <= q ? dt / (2.0 * j + 1.0) : dt;
                    total += w * v.dot(M * v);
                }
            }
        }
        return total;
    };

    double first = -1.0;
    double prev = -1.0;
    double factor = 0.0;
    for (int m = 1; m <= max_iter; ++m) {
        Eigen::VectorXd xu_new = xu;
        if (nu > 0) xu_new = mass_lu.solve(bu - system.substep_stiffness() * xu - system.substep_flux() * xf);
        Eigen::VectorXd xf_new = xf;
        if (nf > 0) xf_new = flux_lu.solve(bf - system.flux_substep() * xu_new);
        const double delta = composite_norm2(xu_new - xu);
        if (prev > 0.0) factor = std::sqrt(delta / prev);
        if (first < 0.0) first = delta;
        xu = std::move(xu_new);
        xf = std::move(xf_new);
        spdlog::debug("fixed point: iteration {} delta {:.3e} factor {:.3g}", m, std::sqrt(delta), factor);
        if (!std::isfinite(delta) || (m > 3 && delta > 1e12 * std::max(first, 1e-300))) {
            throw ContractionError("fixed-point iteration diverged after " + std::to_string(m) +
                                       " iterations (contraction factor " + std::to_string(factor) +
                                       ", step restriction ratio dt(h^-2+h^-1) = " + std::to_string(ratio) + ")",
                                   ratio, factor, m);
        }
        if (delta < tol * tol) {
            Eigen::VectorXd x(system.size());
            x << xu, xf;
            WindowSolution sol = system.unpack(x, incoming);
            sol.diagnostics = {"fixed-point", std::sqrt(delta), m};
            return sol;
        }
        prev = delta;
    }
    throw ContractionError("fixed-point iteration did not converge in " + std::to_string(max_iter) +
                               " iterations (contraction factor " + std::to_string(factor) +
                               ", step restriction ratio dt(h^-2+h^-1) = " + std::to_string(ratio) + ")",
                           ratio, factor, max_iter);
}

double step_restriction_ratio(const WindowConfig& cfg, double h) {
    if (!(h > 0.0)) throw StructuralError("step_restriction_ratio: h must be positive");
    return cfg.dt() * (1.0 / (h * h) + 1.0 / h);
}

// ---------------------------------------------------------------------------

ConservationReport check_flux_conservation(const WindowSolution& sol, const WindowConfig& cfg,
                                           ConservationMode mode, const FeOperators& ops) {
    const Eigen::Matrix2d& B = ops.coupling;
    std::vector<std::string> violated;
    if (B(0, 0) != -B(1, 0)) violated.push_back("b11 = -b21");
    if (B(0, 1) != -B(1, 1)) violated.push_back("b12 = -b22");
    if (ops.interface_forcing == InterfaceForcing::general) violated.push_back("g1 = -g2");
    if (!violated.empty()) {
        std::string msg = "check_flux_conservation: coupling data violate ";
        for (std::size_t k = 0; k < violated.size(); ++k) msg += (k ? ", " : "") + violated[k];
        throw PreconditionError(msg);
    }
    if (sol.flux.size() != 2) throw StructuralError("check_flux_conservation: solution has no fluxes");

    const TimePoly& F1 = sol.flux[0];
    const TimePoly& F2 = sol.flux[1];
    const double dtw = sol.t1 - sol.t0;
    ConservationReport rep;
    rep.mode = mode;
    switch (mode) {
        case ConservationMode::strong: {
            const int r = std::max(F1.order(), F2.order());
            rep.max_residual = max_abs(F1.with_order(r).coeffs() + F2.with_order(r).coeffs());
            rep.scale = std::max(max_abs(F1.coeffs()), max_abs(F2.coeffs()));
            break;
        }
        case ConservationMode::weak: {
            const int s = std::min(F1.order(), F2.order());
            for (int p = 0; p <= std::max(F1.order(), F2.order()); ++p) {
                const double w = dtw / (2.0 * p + 1.0);
                Eigen::VectorXd sum = Eigen::VectorXd::Zero(ops.interface_dofs());
                for (const TimePoly* F : {&F1, &F2}) {
                    if (p > F->order()) continue;
                    const Eigen::VectorXd v = w * (ops.interface_mass * F->coeffs().row(p).transpose());
                    rep.scale = std::max(rep.scale, max_abs(v));
                    sum += v;
                }
                if (p <= s) rep.max_residual = std::max(rep.max_residual, max_abs(sum));
            }
            break;
        }
        case ConservationMode::cn: {
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(ops.interface_dofs());
            for (int i = 0; i < 2; ++i) {
                const TimePoly& F = sol.flux[i];
                Eigen::VectorXd part = Eigen::VectorXd::Zero(ops.interface_dofs());
                for (int n = 1; n <= cfg.M[i]; ++n) {
                    const double a = sol.t0 + dtw * (n - 1) / cfg.M[i];
                    const double b = n == cfg.M[i] ? sol.t1 : sol.t0 + dtw * n / cfg.M[i];
                    part += (b - a) * 0.5 * (F(a) + F(b));
                }
                part = ops.interface_mass * part;
                rep.scale = std::max(rep.scale, max_abs(part));
                sum += part;
            }
            rep.max_residual = max_abs(sum);
            break;
        }
    }
    rep.relative = rep.scale > 0.0 ? rep.max_residual / rep.scale
                                   : (rep.max_residual > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    return rep;
}

double interfacial_energy_term(const WindowSolution& sol, const FeOperators& ops, EnergyMode mode) {
    if (!interface_forcing_zero(ops)) {
        throw PreconditionError("interfacial_energy_term: requires g_1 = g_2 = 0");
    }
    if (!ops.coupling_psd()) {
        throw PreconditionError("interfacial_energy_term: coupling matrix B is not positive semidefinite");
    }
    double total = 0.0;
    for (int i = 0; i < 2; ++i) {
        const TimePoly& F = sol.flux[i];
        const SparseMatrix& T = ops.sub[i].trace;
        for (std::size_t n = 0; n < sol.substeps[i].size(); ++n) {
            const TimePoly& u = sol.substeps[i][n];
            const Interval& I = u.interval();
            if (mode == EnergyMode::cn) {
                const Eigen::VectorXd f = 0.5 * (F(I.a()) + F(I.b()));
                const Eigen::VectorXd U = 0.5 * (sol.sides[i][n] + sol.sides[i][n + 1]);
                total -= I.length() * f.dot(ops.interface_mass * (T * U));
            } else {
                const GaussRule rule = gauss_rule(gauss_points_for_degree(F.order() + u.order()));
                for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
                    const double t = I.from_reference(rule.nodes[g]);
                    total -= 0.5 * I.length() * rule.weights[g] * F(t).dot(ops.interface_mass * (T * u(t)));
                }
            }
        }
    }
    return total;
}

// ---------------------------------------------------------------------------

void Trajectory::write_csv(std::ostream& os) const {
    os << "window,t_sync,energy_1,energy_2,flux_conservation_residual,interfacial_energy_term\n";
    char buf[512];
    for (const WindowRecord& r : records) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.window, r.t_sync, r.energy_1,
                      r.energy_2, r.flux_conservation_residual, r.interfacial_energy_term);
        os << buf;
    }
}

Trajectory run_simulation(const FeOperators& ops, const SchemeSpec& spec, const WindowConfig& cfg,
                          const SimulationOptions& options) {
    cfg.validate();
    const int ks = std::max(1, spec.reach_back());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const bool trapezoid = options.quadrature.coupling == TimeQuadrature::trapezoid;

    Trajectory traj;
    traj.cfg = cfg;
    History history;
    for (int i = 0; i < 2; ++i) {
        traj.initial[i] = ops.sub[i].initial;
        history[i].push_back(ops.sub[i].initial);
        for (int l = 1; l < ks; ++l) {
            if (!options.initializer) {
                throw PreconditionError("run_simulation: scheme '" + spec.name() + "' reaches back " +
                                        std::to_string(ks) + " steps and needs an initializer");
            }
            history[i].push_back(options.initializer(i, -l * cfg.dt_sub(i)));
        }
    }
    auto energy = [&](int i, const Eigen::VectorXd& U) { return 0.5 * U.dot(ops.sub[i].mass * U); };
    traj.records.push_back({0, 0.0, energy(0, traj.initial[0]), energy(1, traj.initial[1]), nan, nan});

    const bool conservative = ops.conservation_compatible();
    const bool energy_applicable = interface_forcing_zero(ops) && ops.coupling_psd();
    // Equal orders allow the strong identity; otherwise the weak one (or its trapezoid form).
    const ConservationMode cmode = cfg.r[0] == cfg.r[1] ? ConservationMode::strong
                                   : trapezoid          ? ConservationMode::cn
                                                        : ConservationMode::weak;

    WindowSystem system(ops, spec, cfg, options.quadrature);
    DirectWindowSolver direct;
    InterfaceData idata{ops.coupling, ops.interface_mass, ops.interface_load};

    for (int w = 1; w <= cfg.N; ++w) {
        WindowSolution sol = with_window_context(w, [&]() -> WindowSolution {
            if (w < cfg.N0) {
                if (!options.initializer) {
                    throw PreconditionError("run_simulation: N0 > 1 requires an initializer");
                }
                WindowSolution s;
                s.index = w;
                const Interval W = cfg.window(w);
                s.t0 = W.a();
                s.t1 = W.b();
                std::array<TimePoly, 2> traces{TimePoly::zero(W, 0, 0), TimePoly::zero(W, 0, 0)};
                for (int i = 0; i < 2; ++i) {
                    s.sides[i].push_back(history[i][0]);
                    std::vector<TimePoly> tr;
                    for (int n = 1; n <= cfg.M[i]; ++n) {
                        const Interval I = cfg.substep(i, w, n);
                        auto f = [&](double t) { return options.initializer(i, t); };
                        s.substeps[i].push_back(project_l2(f, I, spec.q()));
                        s.sides[i].push_back(options.initializer(i, I.b()));
                        tr.push_back(s.substeps[i].back().map_columns(Eigen::MatrixXd(ops.sub[i].trace)));
                    }
                    traces[i] = trace_projection(tr, W, cfg.r[i], options.quadrature.coupling);
                    s.trace.push_back(traces[i]);
                }
                auto F = flux_solve(traces[0], traces[1], idata, cfg.r, cfg.M, options.quadrature.load);
                s.flux = {F[0], F[1]};
                s.diagnostics = {"initializer", 0.0, 0};
                return s;
            }
            system.assemble(w, history);
            if (options.solver == SolverKind::fixed_point) {
                const std::vector<TimePoly> guess =
                    traj.windows.empty() ? std::vector<TimePoly>{} : traj.windows.back().flux;
                return solve_window_fixed_point(system, history, options.tol, options.max_iter, guess);
            }
            const Eigen::VectorXd x = direct.solve(system);
            WindowSolution s = system.unpack(x, history);
            const double bn = system.rhs().norm();
            s.diagnostics = {"direct", bn > 0.0 ? (system.matrix() * x - system.rhs()).norm() / bn : 0.0, 1};
            return s;
        });

        for (int i = 0; i < 2; ++i) {
            std::vector<Eigen::VectorXd> next;
            const int M = cfg.M[i];
            for (int l = 0; l < ks; ++l) {
                if (M - l >= 0) {
                    next.push_back(sol.sides[i][M - l]);
                } else {
                    next.push_back(history[i][l - M]);
                }
            }
            history[i] = std::move(next);
        }

        WindowRecord rec;
        rec.window = w;
        rec.t_sync = cfg.sync_time(w);
        rec.energy_1 = energy(0, history[0][0]);
        rec.energy_2 = energy(1, history[1][0]);
        rec.flux_conservation_residual =
            conservative ? check_flux_conservation(sol, cfg, cmode, ops).relative : nan;
        rec.interfacial_energy_term =
            energy_applicable ? interfacial_energy_term(sol, ops, trapezoid ? EnergyMode::cn : EnergyMode::exact)
                              : nan;
        traj.records.push_back(rec);
        traj.windows.push_back(std::move(sol));
    }
    return traj;
}

}  // namespace mrcouple
