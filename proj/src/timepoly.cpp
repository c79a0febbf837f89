#include "mrcouple/timepoly.hpp"

#include "mrcouple/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mrcouple {

Interval::Interval(double a, double b) : a_(a), b_(b) {
    if (!std::isfinite(a) || !std::isfinite(b)) {
        throw StructuralError("Interval: endpoints must be finite");
    }
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    if (!(b - a > 1e-14 * scale)) {
        throw StructuralError("Interval: degenerate or reversed interval (" + std::to_string(a) +
                              ", " + std::to_string(b) + ")");
    }
}

bool Interval::contains(const Interval& inner, double tol) const noexcept {
    const double slack = tol * std::max(1.0, length());
    return inner.a() >= a_ - slack && inner.b() <= b_ + slack;
}

double legendre_eval(int j, double x) {
    if (j == 0) return 1.0;
    double p_prev = 1.0;
    double p = x;
    for (int n = 1; n < j; ++n) {
        const double next = ((2.0 * n + 1.0) * x * p - n * p_prev) / (n + 1.0);
        p_prev = p;
        p = next;
    }
    return p;
}

double legendre_derivative(int j, double x) {
    // psi_j' = sum over k = j-1, j-3, ... of (2k+1) psi_k
    double d = 0.0;
    for (int k = j - 1; k >= 0; k -= 2) {
        d += (2.0 * k + 1.0) * legendre_eval(k, x);
    }
    return d;
}

Eigen::VectorXd legendre_values(int n, double x) {
    Eigen::VectorXd v(n + 1);
    v(0) = 1.0;
    if (n >= 1) v(1) = x;
    for (int k = 1; k < n; ++k) {
        v(k + 1) = ((2.0 * k + 1.0) * x * v(k) - k * v(k - 1)) / (k + 1.0);
    }
    return v;
}

GaussRule gauss_rule(int n) {
    if (n < 1) throw StructuralError("gauss_rule: point count must be >= 1");
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            const double p = legendre_eval(n, x);
            dp = legendre_derivative(n, x);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        dp = legendre_derivative(n, x);
        rule.nodes[n - 1 - i] = x;
        rule.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return rule;
}

int gauss_points_for_degree(int degree) { return std::max(1, (degree + 2) / 2); }

// ---------------------------------------------------------------------------
// TimePoly

TimePoly::TimePoly(Interval interval, Eigen::MatrixXd coeffs)
    : interval_(interval), coeffs_(std::move(coeffs)) {
    if (coeffs_.rows() < 1) throw StructuralError("TimePoly: needs at least one mode");
}

TimePoly TimePoly::zero(Interval interval, int order, int dim) {
    return TimePoly(interval, Eigen::MatrixXd::Zero(order + 1, dim));
}

TimePoly TimePoly::constant(Interval interval, const Eigen::VectorXd& value) {
    return TimePoly(interval, value.transpose());
}

Eigen::VectorXd TimePoly::operator()(double t) const {
    const Eigen::VectorXd psi = legendre_values(order(), interval_.to_reference(t));
    return coeffs_.transpose() * psi;
}

TimePoly TimePoly::derivative() const {
    const int n = order();
    if (n == 0) return zero(interval_, 0, dim());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, dim());
    for (int j = 0; j < n; ++j) {
        for (int k = j + 1; k <= n; k += 2) d.row(j) += coeffs_.row(k);
        d.row(j) *= (2.0 * j + 1.0);
    }
    d *= 2.0 / interval_.length();
    return TimePoly(interval_, std::move(d));
}

TimePoly TimePoly::with_order(int new_order) const {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(new_order + 1, dim());
    const int keep = std::min(new_order, order()) + 1;
    c.topRows(keep) = coeffs_.topRows(keep);
    return TimePoly(interval_, std::move(c));
}

TimePoly TimePoly::map_columns(const Eigen::MatrixXd& map) const {
    return TimePoly(interval_, coeffs_ * map.transpose());
}

void TimePoly::require_compatible(const TimePoly& other) const {
    const double tol = 1e-12 * std::max(1.0, interval_.length());
    if (std::abs(interval_.a() - other.interval_.a()) > tol ||
        std::abs(interval_.b() - other.interval_.b()) > tol) {
        throw StructuralError("TimePoly: operands live on different intervals");
    }
    if (dim() != other.dim()) throw StructuralError("TimePoly: column counts differ");
}

TimePoly& TimePoly::operator+=(const TimePoly& other) {
    require_compatible(other);
    if (other.order() > order()) *this = with_order(other.order());
    coeffs_.topRows(other.order() + 1) += other.coeffs_;
    return *this;
}

TimePoly& TimePoly::operator-=(const TimePoly& other) {
    require_compatible(other);
    if (other.order() > order()) *this = with_order(other.order());
    coeffs_.topRows(other.order() + 1) -= other.coeffs_;
    return *this;
}

TimePoly& TimePoly::operator*=(double s) {
    coeffs_ *= s;
    return *this;
}

// ---------------------------------------------------------------------------
// Projections

namespace {

// Accumulates int_{panel} f psi_j(window) dt into rows of `acc`.
void accumulate_panel(const TimeFunction& f, const Interval& window, double a, double b,
                      int k, const GaussRule& rule, Eigen::MatrixXd& acc) {
    const double half = 0.5 * (b - a);
    for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
        const double t = a + half * (rule.nodes[g] + 1.0);
        const Eigen::VectorXd value = f(t);
        if (acc.cols() == 0) acc = Eigen::MatrixXd::Zero(k + 1, value.size());
        const Eigen::VectorXd psi = legendre_values(k, window.to_reference(t));
        acc.noalias() += (rule.weights[g] * half) * psi * value.transpose();
    }
}

TimePoly finish_projection(const Interval& window, Eigen::MatrixXd acc) {
    for (int j = 0; j < acc.rows(); ++j) {
        acc.row(j) *= (2.0 * j + 1.0) / window.length();
    }
    return TimePoly(window, std::move(acc));
}

}  // namespace

TimePoly project_l2(const TimeFunction& f, const Interval& interval, int k,
                    std::span<const double> breakpoints, int points_per_panel) {
    if (k < 0) throw StructuralError("project_l2: target order must be >= 0");
    const int n = points_per_panel > 0 ? points_per_panel : k + 16;
    const GaussRule rule = gauss_rule(n);

    std::vector<double> cuts{interval.a()};
    std::vector<double> sorted(breakpoints.begin(), breakpoints.end());
    std::sort(sorted.begin(), sorted.end());
    for (double c : sorted) {
        if (c > cuts.back() && c < interval.b()) cuts.push_back(c);
    }
    cuts.push_back(interval.b());

    Eigen::MatrixXd acc;
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        accumulate_panel(f, interval, cuts[p], cuts[p + 1], k, rule, acc);
    }
    return finish_projection(interval, std::move(acc));
}

TimePoly project_l2_broken(std::span<const TimePoly> pieces, int k) {
    if (pieces.empty()) throw StructuralError("project_l2_broken: no pieces");
    if (k < 0) throw StructuralError("project_l2_broken: target order must be >= 0");
    const Interval window(pieces.front().interval().a(), pieces.back().interval().b());
    const double tol = 1e-12 * std::max(1.0, window.length());
    for (std::size_t p = 0; p + 1 < pieces.size(); ++p) {
        if (std::abs(pieces[p].interval().b() - pieces[p + 1].interval().a()) > tol) {
            throw StructuralError("project_l2_broken: pieces are not contiguous at piece " +
                                  std::to_string(p));
        }
        if (pieces[p].dim() != pieces[p + 1].dim()) {
            throw StructuralError("project_l2_broken: pieces have different column counts");
        }
    }

    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k + 1, pieces.front().dim());
    for (const TimePoly& piece : pieces) {
        const GaussRule rule = gauss_rule(gauss_points_for_degree(piece.order() + k));
        const Interval& I = piece.interval();
        const double half = 0.5 * I.length();
        for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
            const double t = I.from_reference(rule.nodes[g]);
            const Eigen::VectorXd psi_piece = legendre_values(piece.order(), rule.nodes[g]);
            const Eigen::VectorXd psi_window = legendre_values(k, window.to_reference(t));
            const Eigen::RowVectorXd value = psi_piece.transpose() * piece.coeffs();
            acc.noalias() += (rule.weights[g] * half) * psi_window * value;
        }
    }
    return finish_projection(window, std::move(acc));
}

// ---------------------------------------------------------------------------
// Side-condition schemes

SchemeSpec::SchemeSpec(Unchecked, std::string name, int q, std::vector<double> thetas,
                       Eigen::MatrixXd D)
    : name_(std::move(name)), q_(q), thetas_(std::move(thetas)), D_(std::move(D)) {
    if (q_ < 0) throw StructuralError("SchemeSpec: q must be >= 0");
    const int ns = side_count();
    if (ns > q_ + 1) throw StructuralError("SchemeSpec: n_s must not exceed q + 1");
    if (D_.cols() < 1) throw StructuralError("SchemeSpec: D needs at least one column");
    if (D_.rows() != ns) {
        throw StructuralError("SchemeSpec: D has " + std::to_string(D_.rows()) +
                              " rows but there are " + std::to_string(ns) + " side nodes");
    }
}

SchemeSpec::SchemeSpec(std::string name, int q, std::vector<double> thetas, Eigen::MatrixXd D)
    : SchemeSpec(Unchecked{}, std::move(name), q, std::move(thetas), std::move(D)) {
    for (std::size_t k = 0; k + 1 < thetas_.size(); ++k) {
        if (!(thetas_[k] < thetas_[k + 1])) {
            throw StructuralError("SchemeSpec '" + name_ +
                                  "': side-condition nodes theta must be strictly increasing "
                                  "(D-tilde would be singular)");
        }
    }
    if (!thetas_.empty() && thetas_.back() > 1.0) {
        throw StructuralError("SchemeSpec '" + name_ + "': theta must not exceed 1");
    }
    const DtildeReport report = build_dtilde(q_, thetas_);
    if (!report.nonsingular) {
        throw StructuralError("SchemeSpec '" + name_ +
                              "': side-condition check failed, D-tilde is singular (det = " +
                              std::to_string(report.determinant) + ")");
    }
    checked_ = true;
}

SchemeSpec SchemeSpec::unchecked(std::string name, int q, std::vector<double> thetas,
                                 Eigen::MatrixXd D) {
    return SchemeSpec(Unchecked{}, std::move(name), q, std::move(thetas), std::move(D));
}

namespace schemes {

SchemeSpec crank_nicolson() {
    Eigen::MatrixXd D(2, 2);
    D << 0.0, 1.0,
         1.0, 0.0;
    return SchemeSpec("crank-nicolson", 1, {0.0, 1.0}, D);
}

SchemeSpec endpoint_continuous(int q) {
    if (q < 1) throw StructuralError("endpoint_continuous: q must be >= 1");
    Eigen::MatrixXd D(2, 2);
    D << 0.0, 1.0,
         1.0, 0.0;
    return SchemeSpec("endpoint-continuous" + std::to_string(q), q, {0.0, 1.0}, D);
}

SchemeSpec radau_dg(int q) {
    return SchemeSpec("radau-dg" + std::to_string(q), q, {1.0}, Eigen::MatrixXd::Ones(1, 1));
}

SchemeSpec continuous_galerkin(int q) {
    if (q < 1) throw StructuralError("continuous_galerkin: q must be >= 1");
    Eigen::MatrixXd D(1, 2);
    D << 0.0, 1.0;
    return SchemeSpec("cg" + std::to_string(q), q, {0.0}, D);
}

SchemeSpec unconstrained_dg(int q) {
    return SchemeSpec("unconstrained-dg" + std::to_string(q), q, {}, Eigen::MatrixXd::Zero(0, 1));
}

std::optional<SchemeSpec> by_name(const std::string& name) {
    auto order_suffix = [&](const std::string& prefix) -> std::optional<int> {
        if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) return std::nullopt;
        const std::string digits = name.substr(prefix.size());
        if (!std::all_of(digits.begin(), digits.end(), ::isdigit)) return std::nullopt;
        return std::stoi(digits);
    };
    if (name == "crank-nicolson") return crank_nicolson();
    if (auto q = order_suffix("radau-dg")) return radau_dg(*q);
    if (auto q = order_suffix("endpoint-continuous")) return endpoint_continuous(*q);
    if (auto q = order_suffix("unconstrained-dg")) return unconstrained_dg(*q);
    if (auto q = order_suffix("cg")) return continuous_galerkin(*q);
    return std::nullopt;
}

}  // namespace schemes

DtildeReport build_dtilde(int q, std::span<const double> thetas) {
    const int ns = static_cast<int>(thetas.size());
    DtildeReport report;
    report.matrix = Eigen::MatrixXd::Zero(ns, ns);
    if (ns == 0) return report;
    for (int j = 0; j < ns; ++j) {
        for (int k = 0; k < ns; ++k) {
            // 1-based m_k = k + q - n_s becomes (k + 1) + q - n_s here.
            report.matrix(j, k) = legendre_eval(k + 1 + q - ns, 2.0 * thetas[j] - 1.0);
        }
    }
    report.determinant = report.matrix.determinant();
    report.nonsingular = std::abs(report.determinant) > 1e-12 * report.matrix.norm();
    return report;
}

DtildeReport build_dtilde(const SchemeSpec& spec) { return build_dtilde(spec.q(), spec.thetas()); }

JDecomposition j_decompose(const TimePoly& v, const SchemeSpec& spec) {
    if (v.order() != spec.q()) {
        throw StructuralError("j_decompose: polynomial order " + std::to_string(v.order()) +
                              " does not match q = " + std::to_string(spec.q()));
    }
    JDecomposition parts;
    const int low = spec.q() - spec.side_count();
    if (low >= 0) {
        parts.projection = TimePoly(v.interval(), v.coeffs().topRows(low + 1));
    }
    const Interval& I = v.interval();
    for (double theta : spec.thetas()) {
        parts.samples.push_back(v(I.a() + theta * I.length()));
    }
    return parts;
}

TimePoly j_reconstruct(const JDecomposition& parts, const SchemeSpec& spec, const Interval& interval) {
    const int q = spec.q();
    const int ns = spec.side_count();
    const int low = q - ns;
    if (static_cast<int>(parts.samples.size()) != ns) {
        throw StructuralError("j_reconstruct: expected " + std::to_string(ns) + " samples");
    }
    int dim = 0;
    if (parts.projection) {
        dim = parts.projection->dim();
    } else if (!parts.samples.empty()) {
        dim = static_cast<int>(parts.samples.front().size());
    }

    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(q + 1, dim);
    if (low >= 0) {
        if (!parts.projection || parts.projection->order() != low) {
            throw StructuralError("j_reconstruct: projection must have order q - n_s");
        }
        c.topRows(low + 1) = parts.projection->coeffs();
    }
    if (ns == 0) return TimePoly(interval, std::move(c));

    const DtildeReport dt = build_dtilde(spec);
    if (!dt.nonsingular) {
        throw PreconditionError("j_reconstruct: D-tilde of scheme '" + spec.name() +
                                "' is singular; the J mapping is not invertible");
    }
    // Residual of the samples after removing the known low modes.
    Eigen::MatrixXd rhs(ns, dim);
    for (int j = 0; j < ns; ++j) {
        const double x = 2.0 * spec.thetas()[j] - 1.0;
        Eigen::RowVectorXd known = Eigen::RowVectorXd::Zero(dim);
        for (int m = 0; m <= low; ++m) known += legendre_eval(m, x) * c.row(m);
        rhs.row(j) = parts.samples[j].transpose() - known;
    }
    c.bottomRows(ns) = dt.matrix.partialPivLu().solve(rhs);
    return TimePoly(interval, std::move(c));
}

double j_norm(const JDecomposition& parts, const Interval& interval, bool weighted) {
    double sq = 0.0;
    if (parts.projection) {
        const double n = l2_time_norm(*parts.projection);
        sq += n * n;
    }
    const double w = weighted ? interval.length() : 1.0;
    for (const auto& s : parts.samples) sq += w * s.squaredNorm();
    return std::sqrt(sq);
}

double l2_time_norm(const TimePoly& v) {
    double sq = 0.0;
    for (int j = 0; j <= v.order(); ++j) {
        sq += v.interval().length() / (2.0 * j + 1.0) * v.coeffs().row(j).squaredNorm();
    }
    return std::sqrt(sq);
}

}  // namespace mrcouple
