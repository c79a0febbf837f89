#pragma once

#include "mrcouple/coupling.hpp"
#include "mrcouple/fespace.hpp"
#include "mrcouple/mesh.hpp"

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace mrcouple {

// ---------------------------------------------------------------------------
// Manufactured solutions

/// Separable exact solution u_i(x, y, t) = sin(pi x) Y_i(y) a(t) on both subdomains.
struct SeparableSolution {
    enum class Time { exponential, linear, quadratic };

    Time time = Time::exponential;
    std::array<std::vector<double>, 2> profile;  ///< monomial coefficients of Y_1, Y_2

    double a(double t) const;
    double a_dot(double t) const;
    double y_profile(int i, double y, int derivative = 0) const;
    double value(int i, double x, double y, double t) const;
    /// Polynomial degree of a(t), or -1 for the exponential.
    int temporal_degree() const;
};

struct ManufacturedCase {
    std::string name;
    SeparableSolution solution;
    ProblemSpec problem;  ///< nu, advection and B from the base spec; f, g, initial data derived
    double residual = 0.0;  ///< max residual of the model equations at 20 sampled points
    /// When true the intended solution is the semi-discrete w a(t) (see apply_discrete_manufactured).
    bool discrete = false;

    int temporal_degree() const { return solution.temporal_degree(); }
    bool conservation_compatible() const { return problem.conservation_compatible(); }
};

/// Presets: "smooth" (exponential decay), "poly1", "poly2" (polynomial in time,
/// discretely manufactured), "antisymmetric" (u_2(x, y) = -u_1(x, -y), needs
/// nu_1 = nu_2 and equal advection for g_1 = -g_2).
/// Throws StructuralError for an unknown name and Error when the residual
/// check exceeds 1e-10.
ManufacturedCase manufactured_case(const std::string& name, const ProblemSpec& base);

/// Nodal interpolant of a space function on the free dofs.
Eigen::VectorXd interpolate(const Mesh& mesh, const SpaceFn& fn);

/// Replaces loads and initial data so that u_i(t) = w_i a(t) solves the
/// semi-discrete system exactly (interface forcing removed).
void apply_discrete_manufactured(FeOperators& ops, const std::array<Eigen::VectorXd, 2>& w,
                                 std::function<double(double)> a, std::function<double(double)> a_dot);

/// Builds meshes, operators and the manufactured case; discrete cases are
/// already applied. `consistent_initial` replaces the initial data of
/// continuous cases by the state whose semi-discrete time derivative matches
/// the projected exact derivative, removing the stiff initial layer.
struct ManufacturedProblem {
    Mesh mesh1, mesh2;
    InterfaceMap map;
    ManufacturedCase mms;
    FeOperators ops;
};
ManufacturedProblem build_manufactured_problem(const std::string& name, const ProblemSpec& base, int nx, int ny,
                                               bool consistent_initial = false);

// ---------------------------------------------------------------------------
// Reference solutions of the semi-discrete system

/// Monolithic semi-discrete system M u' = -K u + b(t) with u = [u_1; u_2].
struct GlobalSystem {
    SparseMatrix M;
    SparseMatrix K;
    LoadFunction load;
    Eigen::VectorXd initial;
    std::array<int, 2> dofs{0, 0};
};

GlobalSystem global_system(const FeOperators& ops);

/// The global system as a single uncoupled domain (empty interface), for
/// unsplit DGiT solves.
SubdomainOperators as_single_domain(const GlobalSystem& g);

enum class ReferenceMethod { crank_nicolson, radau_iia };

/// Dense trajectory of the semi-discrete solution.
class ReferenceTrajectory {
public:
    ReferenceTrajectory(const FeOperators& ops, double t_f, int n_steps, ReferenceMethod method);

    Eigen::VectorXd operator()(double t) const;
    Eigen::VectorXd subdomain(int i, double t) const;
    /// Semi-discrete flux coefficients F_i = sum_j b_ij T_j u_j - M_Gamma^{-1} G_i(t).
    Eigen::VectorXd flux(int i, double t) const;

    double t_f() const { return t_f_; }
    int steps() const { return n_steps_; }
    double step() const { return t_f_ / n_steps_; }
    ReferenceMethod method() const { return method_; }

private:
    const FeOperators* ops_;
    double t_f_;
    int n_steps_;
    ReferenceMethod method_;
    std::array<int, 2> dofs_{};
    std::vector<Eigen::VectorXd> nodes_;   ///< u(t_k), k = 0..n_steps
    std::vector<Eigen::MatrixXd> stages_;  ///< Radau stage values per step (columns)
    Eigen::LLT<Eigen::MatrixXd> interface_mass_llt_;
};

/// Largest M-norm change of the reference at 65 sample times when the step
/// count is doubled from n_steps (0 selects the default count).
double reference_drift(const FeOperators& ops, double t_f, ReferenceMethod method, int n_steps = 0);

/// Default overkill resolutions: 2^9 Radau IIA or 2^12 Crank-Nicolson steps per unit time.
ReferenceTrajectory reference_solve(const FeOperators& ops, double t_f,
                                    ReferenceMethod method = ReferenceMethod::radau_iia, int n_steps = 0);

// ---------------------------------------------------------------------------
// Errors and rates

struct ErrorReport {
    std::array<double, 2> l2{0.0, 0.0};        ///< broken space-time L2 error, M-norm
    std::array<double, 2> nodal{0.0, 0.0};     ///< max over substeps of |u_ref(t_i^n) - U_i^n|_M
    std::vector<double> sync;                  ///< E at t^1 .. t^N: sqrt(sum_i |e_i|_M^2)
    std::array<double, 2> flux_l2{0.0, 0.0};   ///< window L2 error of F_i, M_Gamma-norm
    std::vector<double> window_squares;        ///< per-window sum_i |||e_i|||^2

    double l2_total() const;
    double sync_max() const;
};

ErrorReport error_norms(const Trajectory& traj, const ReferenceTrajectory& oracle, const FeOperators& ops);

enum class ErrorTarget { l2, nodal };

struct RateRow {
    int level = 0;
    double dt = 0.0, dt1 = 0.0, dt2 = 0.0;
    double err_l2_u1 = 0.0, err_l2_u2 = 0.0, err_sync = 0.0;
    double rate_running = 0.0;  ///< NaN on the first level
    bool excluded = false;      ///< target error under the 1e-12 floor
};

struct RateTable {
    std::vector<RateRow> rows;
    ErrorTarget target = ErrorTarget::l2;
    double rate = 0.0;  ///< least-squares slope over the included levels (NaN if < 2)
    std::vector<std::string> notes;

    /// CSV: level,dt,dt1,dt2,err_l2_u1,err_l2_u2,err_sync,rate_running
    void write_csv(std::ostream& os) const;
};

/// Runs the base configuration with N, 2N, 4N, ... windows (M_i, r_i fixed)
/// and fits log(error) against log(dt). Levels run on up to `jobs` threads.
RateTable convergence_study(const FeOperators& ops, const SchemeSpec& spec, const WindowConfig& base, int levels,
                            ErrorTarget target, const ReferenceTrajectory& oracle,
                            const SimulationOptions& options = {}, int jobs = 1);

/// Least-squares slope of log(err) against log(dt).
double fitted_rate(const std::vector<double>& dt, const std::vector<double>& err);

struct EnergyReport {
    std::vector<double> energies;  ///< sum_i 1/2 |U_i|_M^2 at t^0 .. t^N
    bool monotone = true;
    double max_increase = 0.0;
};

/// Non-increasing verdict with tolerance 1e-12 E(0).
EnergyReport energy_report(const Trajectory& traj);

}  // namespace mrcouple
