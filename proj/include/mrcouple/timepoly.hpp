#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrcouple {

/// Open time interval (a, b) with a < b.
class Interval {
public:
    Interval(double a, double b);

    double a() const noexcept { return a_; }
    double b() const noexcept { return b_; }
    double length() const noexcept { return b_ - a_; }
    double midpoint() const noexcept { return 0.5 * (a_ + b_); }

    /// Affine map onto the reference interval [-1, 1].
    double to_reference(double t) const noexcept { return 2.0 * (t - a_) / (b_ - a_) - 1.0; }
    double from_reference(double x) const noexcept { return a_ + 0.5 * (x + 1.0) * (b_ - a_); }

    bool contains(const Interval& inner, double tol = 1e-12) const noexcept;

private:
    double a_;
    double b_;
};

/// Legendre polynomial psi_j(x), normalized so that psi_j(1) = 1.
double legendre_eval(int j, double x);

/// Derivative psi_j'(x).
double legendre_derivative(int j, double x);

/// All values psi_0(x) .. psi_n(x).
Eigen::VectorXd legendre_values(int n, double x);

struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree 2n-1.
GaussRule gauss_rule(int n);

/// Smallest point count integrating a polynomial of the given degree exactly.
int gauss_points_for_degree(int degree);

/// Vector-valued polynomial in time on an interval, stored in Legendre modes.
///
/// Row j of `coeffs()` holds the spatial coefficient vector of mode psi_j
/// mapped onto the interval; the number of columns is the spatial dimension.
class TimePoly {
public:
    TimePoly(Interval interval, Eigen::MatrixXd coeffs);

    static TimePoly zero(Interval interval, int order, int dim);
    static TimePoly constant(Interval interval, const Eigen::VectorXd& value);

    const Interval& interval() const noexcept { return interval_; }
    int order() const noexcept { return static_cast<int>(coeffs_.rows()) - 1; }
    int dim() const noexcept { return static_cast<int>(coeffs_.cols()); }
    const Eigen::MatrixXd& coeffs() const noexcept { return coeffs_; }

    /// Value at time t (t may lie outside the interval; the polynomial is extended).
    Eigen::VectorXd operator()(double t) const;

    TimePoly derivative() const;

    /// Same polynomial re-expressed with order `order` (padding or truncating modes).
    TimePoly with_order(int order) const;

    /// Applies a linear map to every mode: result columns = coeffs * map^T.
    TimePoly map_columns(const Eigen::MatrixXd& map) const;

    TimePoly& operator+=(const TimePoly& other);
    TimePoly& operator-=(const TimePoly& other);
    TimePoly& operator*=(double s);

    friend TimePoly operator+(TimePoly lhs, const TimePoly& rhs) { return lhs += rhs; }
    friend TimePoly operator-(TimePoly lhs, const TimePoly& rhs) { return lhs -= rhs; }
    friend TimePoly operator*(double s, TimePoly p) { return p *= s; }

private:
    void require_compatible(const TimePoly& other) const;

    Interval interval_;
    Eigen::MatrixXd coeffs_;
};

using TimeFunction = std::function<Eigen::VectorXd(double)>;

/// L2 projection of f onto polynomials of order k on the interval.
///
/// Integrals use Gauss rules with `points_per_panel` nodes on each panel; panels
/// are delimited by `breakpoints` (interior points where f may be non-smooth).
/// `points_per_panel <= 0` selects k + 16.
TimePoly project_l2(const TimeFunction& f, const Interval& interval, int k,
                    std::span<const double> breakpoints = {}, int points_per_panel = 0);

/// L2 projection of a piecewise polynomial (pieces tiling a window) onto order k.
/// Every piece is integrated with an exact Gauss rule.
TimePoly project_l2_broken(std::span<const TimePoly> pieces, int k);

/// Side-condition scheme: trial order q, side nodes theta_k and reach-back matrix D.
///
/// Side conditions read u^n(t^{n-1} + theta_k dt) = sum_l D(k, l) U^{n-l}, l = 0..k_s.
class SchemeSpec {
public:
    /// Validated construction; throws StructuralError for bad shapes, unsorted
    /// nodes or a singular D-tilde matrix.
    SchemeSpec(std::string name, int q, std::vector<double> thetas, Eigen::MatrixXd D);

    /// Diagnostic construction that skips the nodal and D-tilde checks.
    /// Reconstruction through such a spec fails when D-tilde is singular.
    static SchemeSpec unchecked(std::string name, int q, std::vector<double> thetas,
                                Eigen::MatrixXd D);

    const std::string& name() const noexcept { return name_; }
    int q() const noexcept { return q_; }
    int side_count() const noexcept { return static_cast<int>(thetas_.size()); }
    int reach_back() const noexcept { return static_cast<int>(D_.cols()) - 1; }
    const std::vector<double>& thetas() const noexcept { return thetas_; }
    const Eigen::MatrixXd& side_matrix() const noexcept { return D_; }

    /// Highest Legendre mode of the variational test space, q + 1 - n_s.
    int test_order() const noexcept { return q_ + 1 - side_count(); }

    bool checked() const noexcept { return checked_; }

private:
    struct Unchecked {};
    SchemeSpec(Unchecked, std::string name, int q, std::vector<double> thetas, Eigen::MatrixXd D);

    std::string name_;
    int q_;
    std::vector<double> thetas_;
    Eigen::MatrixXd D_;
    bool checked_ = false;
};

namespace schemes {

/// q = 1 continuous scheme with u(t^{n-1}) = U^{n-1}, u(t^n) = U^n.
SchemeSpec crank_nicolson();

/// Continuous scheme of order q >= 1 pinned at both substep endpoints.
SchemeSpec endpoint_continuous(int q);

/// Standard upwind DG(q): single side condition u(t^n) = U^n.
SchemeSpec radau_dg(int q);

/// Continuous Galerkin cG(q): single side condition u(t^{n-1}) = U^{n-1}.
SchemeSpec continuous_galerkin(int q);

/// No side conditions; U^n is fixed by the order q + 1 test space.
SchemeSpec unconstrained_dg(int q);

/// Looks up a preset by name ("crank-nicolson", "radau-dg1", ...).
std::optional<SchemeSpec> by_name(const std::string& name);

}  // namespace schemes

struct DtildeReport {
    Eigen::MatrixXd matrix;
    double determinant = 1.0;
    bool nonsingular = true;
};

/// Matrix of Legendre values psi_{m_k}(2 theta_j - 1), m_k = k + q - n_s.
DtildeReport build_dtilde(int q, std::span<const double> thetas);
DtildeReport build_dtilde(const SchemeSpec& spec);

/// Split of an order-q polynomial into its low-order projection and side samples.
struct JDecomposition {
    std::optional<TimePoly> projection;      ///< order q - n_s; empty when n_s = q + 1
    std::vector<Eigen::VectorXd> samples;    ///< v(t^{n-1} + theta_k dt)
};

JDecomposition j_decompose(const TimePoly& v, const SchemeSpec& spec);

/// Inverse of j_decompose on `interval`; throws PreconditionError on a singular spec.
TimePoly j_reconstruct(const JDecomposition& parts, const SchemeSpec& spec, const Interval& interval);

/// Norm of a decomposition: sqrt(|||P v|||^2 + w * sum |v(t_k)|^2), where
/// w = dt when `weighted`, else 1.
double j_norm(const JDecomposition& parts, const Interval& interval, bool weighted);

/// L2-in-time norm sqrt(int |v|^2 dt) with Euclidean spatial norm.
double l2_time_norm(const TimePoly& v);

}  // namespace mrcouple
