#pragma once

#include "mrcouple/dgit.hpp"
#include "mrcouple/fespace.hpp"
#include "mrcouple/timepoly.hpp"

#include <Eigen/SparseLU>

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mrcouple {

/// Multirate clock: N windows of length t_f / N, M_i substeps per window.
struct WindowConfig {
    double t_f = 1.0;
    int N = 1;
    std::array<int, 2> M{1, 1};
    std::array<int, 2> r{1, 1};
    int N0 = 1;  ///< windows before N0 are filled by the initializer

    /// Throws StructuralError naming the offending field.
    void validate() const;

    double dt() const { return t_f / N; }
    double dt_sub(int i) const { return dt() / M[i]; }
    double sync_time(int n) const { return t_f * n / N; }
    /// Window n in 1..N.
    Interval window(int n) const;
    /// Substep n in 1..M_i of window w; endpoints are t0 + (t1 - t0) n / M_i.
    Interval substep(int i, int w, int n) const;
};

struct SolverDiagnostics {
    std::string solver;
    double residual = 0.0;  ///< relative residual (direct) or final iterate delta (fixed point)
    int iterations = 0;
};

/// Side values entering a window per subdomain, newest first: [U^0, U^{-1}, ...].
using History = std::array<std::vector<Eigen::VectorXd>, 2>;

struct WindowSolution {
    int index = 0;
    double t0 = 0.0;
    double t1 = 0.0;
    std::array<std::vector<TimePoly>, 2> substeps;
    std::array<std::vector<Eigen::VectorXd>, 2> sides;  ///< U_i^0 .. U_i^{M_i}
    std::vector<TimePoly> trace;                         ///< u_Gamma,1 and u_Gamma,2
    std::vector<TimePoly> flux;                          ///< F_1 and F_2
    SolverDiagnostics diagnostics;

    Interval window() const { return {t0, t1}; }
};

/// Window-space projection of the broken substep traces. Exact mode is the L2
/// projection; trapezoid mode uses the midpoint-average right side
/// dt_i sum_n (u^{n-1/2}, (lambda)^{n-1/2}).
TimePoly trace_projection(std::span<const TimePoly> traces, const Interval& window, int r,
                          TimeQuadrature mode = TimeQuadrature::exact);

/// Interface forcing data used by flux_solve.
struct InterfaceData {
    Eigen::Matrix2d coupling = Eigen::Matrix2d::Zero();
    SparseMatrix interface_mass;
    std::array<LoadFunction, 2> load{};  ///< t -> (g_i(t), mu_k)_Gamma; empty means zero
};

/// F_i = Pi_{r_i}(b_i1 u_Gamma,1 + b_i2 u_Gamma,2 - g_i) on the window.
/// In trapezoid mode the g-term uses subdomain i's substep endpoint averages.
std::array<TimePoly, 2> flux_solve(const TimePoly& u_gamma1, const TimePoly& u_gamma2,
                                   const InterfaceData& data, std::array<int, 2> r,
                                   std::array<int, 2> M = {1, 1},
                                   TimeQuadrature mode = TimeQuadrature::exact);

/// Monolithic linear system of one coupling window.
///
/// Unknowns: substep blocks [c_0..c_q, U^n] of subdomain 1 (n = 1..M_1), then
/// of subdomain 2, then the flux modes of F_1 and F_2 (d_Gamma per mode).
/// The trace projections are eliminated.
class WindowSystem {
public:
    WindowSystem(const FeOperators& ops, const SchemeSpec& spec, const WindowConfig& cfg,
                 QuadratureFlags flags = {});

    /// Builds matrix and right side for window w given the incoming side values.
    void assemble(int w, const History& incoming);

    int size() const { return size_; }
    int substep_offset(int i, int n) const;
    int flux_offset(int i) const { return flux_offset_[i]; }

    const SparseMatrix& matrix() const { return matrix_; }
    const Eigen::VectorXd& rhs() const { return rhs_; }

    /// Pieces for the lagged iteration: the substep rows split as
    /// mass (incl. in-window history) + stiffness + flux coupling, and the flux rows.
    const SparseMatrix& substep_mass() const { return uu_mass_; }
    const SparseMatrix& substep_stiffness() const { return uu_stiff_; }
    const SparseMatrix& substep_flux() const { return uf_; }
    const SparseMatrix& flux_substep() const { return fu_; }
    const SparseMatrix& flux_flux() const { return ff_; }
    int substep_unknowns() const { return flux_offset_[0]; }

    /// Converts a solution vector into polynomials, side values, traces and fluxes.
    WindowSolution unpack(const Eigen::VectorXd& x, const History& incoming) const;

    const FeOperators& operators() const { return *ops_; }
    const SchemeSpec& scheme() const { return spec_; }
    const WindowConfig& config() const { return cfg_; }
    QuadratureFlags quadrature() const { return flags_; }
    int window_index() const { return window_; }

private:
    const FeOperators* ops_;
    SchemeSpec spec_;
    WindowConfig cfg_;
    QuadratureFlags flags_;
    int window_ = 0;
    int size_ = 0;
    std::array<int, 2> flux_offset_{};
    std::array<int, 2> sub_offset_{};
    SparseMatrix matrix_, uu_mass_, uu_stiff_, uf_, fu_, ff_;
    Eigen::VectorXd rhs_;
};

/// Sparse LU of the window matrix, reused while the matrix is unchanged.
class DirectWindowSolver {
public:
    /// Throws SolverError on a singular matrix or a relative residual > 1e-10.
    Eigen::VectorXd solve(const WindowSystem& system);

private:
    SparseMatrix cached_;
    std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu_;
};

WindowSolution solve_window_direct(const WindowSystem& system, const History& incoming);

/// Lagged iteration: substeps solved with L(u_{(m-1)}) and F_{(m-1)} frozen,
/// then traces and fluxes updated. Stops when
/// sum_i sum_n |||du|||_M^2 + dt_i |dU|_M^2 < tol^2. `flux_guess` (one entry per
/// subdomain, may be empty) seeds F_{(0)}; the substep guess is the constant U^0.
/// Throws ContractionError on divergence or when max_iter is exhausted.
WindowSolution solve_window_fixed_point(const WindowSystem& system, const History& incoming, double tol = 1e-10,
                                        int max_iter = 200, const std::vector<TimePoly>& flux_guess = {});

/// dt (h^-2 + h^-1); advisory indicator of the fixed-point step restriction.
double step_restriction_ratio(const WindowConfig& cfg, double h);

enum class ConservationMode { strong, weak, cn };

struct ConservationReport {
    ConservationMode mode = ConservationMode::strong;
    double max_residual = 0.0;
    double scale = 0.0;
    double relative = 0.0;  ///< max_residual / scale (0 when both vanish)
};

/// strong: F_1 + F_2 coefficientwise (the lower order padded with zeros);
/// weak: int (F_1 + F_2, lambda) for window modes up to min(r_1, r_2);
/// cn: sum_i dt_i sum_n ((F_i)^{n-1/2}, mu) against order-0 tests.
/// Throws PreconditionError when the coupling data are not conservation compatible.
ConservationReport check_flux_conservation(const WindowSolution& sol, const WindowConfig& cfg,
                                           ConservationMode mode, const FeOperators& ops);

enum class EnergyMode { exact, cn };

/// exact: -sum_i sum_n int (F_i, u_i^n)_Gamma dt;
/// cn: -sum_i dt_i sum_n ((F_i)^{n-1/2}, U_i^{n-1/2})_Gamma.
/// Throws PreconditionError unless g = 0 and B is positive semidefinite.
double interfacial_energy_term(const WindowSolution& sol, const FeOperators& ops, EnergyMode mode);

enum class SolverKind { direct, fixed_point };

struct SimulationOptions {
    SolverKind solver = SolverKind::direct;
    double tol = 1e-10;
    int max_iter = 200;
    QuadratureFlags quadrature{};
    /// State of subdomain i at time t; fills windows before N0 and any side
    /// values before t = 0 needed by multistep schemes.
    std::function<Eigen::VectorXd(int i, double t)> initializer;
};

struct WindowRecord {
    int window = 0;
    double t_sync = 0.0;
    double energy_1 = 0.0;  ///< 1/2 U^T M U at t_sync
    double energy_2 = 0.0;
    double flux_conservation_residual = 0.0;  ///< relative; NaN when not applicable
    double interfacial_energy_term = 0.0;     ///< NaN when not applicable
};

struct Trajectory {
    WindowConfig cfg;
    std::array<Eigen::VectorXd, 2> initial;
    std::vector<WindowSolution> windows;
    std::vector<WindowRecord> records;  ///< window 0 (initial state) first

    /// CSV: window,t_sync,energy_1,energy_2,flux_conservation_residual,interfacial_energy_term
    void write_csv(std::ostream& os) const;
};

/// Solves windows 1..N in sequence. Errors are rethrown with the window index prepended.
Trajectory run_simulation(const FeOperators& ops, const SchemeSpec& spec, const WindowConfig& cfg,
                          const SimulationOptions& options = {});

}  // namespace mrcouple
