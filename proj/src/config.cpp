#include "mrcouple/config.hpp"

#include "mrcouple/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace mrcouple {

namespace {

using nlohmann::json;

// Collects every validation problem instead of stopping at the first.
class Reader {
public:
    explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

    void fail(const std::string& path, const std::string& msg) { problems_.push_back(path + ": " + msg); }

    bool object(const json& j, const std::string& path) {
        if (j.is_object()) return true;
        fail(path, "expected an object");
        return false;
    }

    void keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown key");
        }
    }

    void integer(const json& j, const std::string& key, const std::string& path, int& out, int min) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_number_integer()) {
            fail(path + "." + key, "expected an integer");
            return;
        }
        const long long x = v.get<long long>();
        if (x < min || x > 1'000'000'000) {
            fail(path + "." + key, "must be >= " + std::to_string(min) + " (got " + std::to_string(x) + ")");
            return;
        }
        out = static_cast<int>(x);
    }

    void number(const json& j, const std::string& key, const std::string& path, double& out, bool positive) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_number()) {
            fail(path + "." + key, "expected a number");
            return;
        }
        const double x = v.get<double>();
        if (!std::isfinite(x) || (positive && !(x > 0.0))) {
            fail(path + "." + key, positive ? "must be a positive finite number" : "must be finite");
            return;
        }
        out = x;
    }

    void string(const json& j, const std::string& key, const std::string& path, std::string& out,
                const std::set<std::string>& allowed = {}) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_string()) {
            fail(path + "." + key, "expected a string");
            return;
        }
        const std::string s = v.get<std::string>();
        if (!allowed.empty() && !allowed.count(s)) {
            std::string opts;
            for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
            fail(path + "." + key, "unknown value '" + s + "' (expected one of " + opts + ")");
            return;
        }
        out = s;
    }

    // Scalar applied to both subdomains or a two-element array.
    template <class T, class Fn>
    void pair(const json& j, const std::string& key, const std::string& path, std::array<T, 2>& out, Fn&& one) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (v.is_array()) {
            if (v.size() != 2) {
                fail(path + "." + key, "expected a scalar or a two-element array");
                return;
            }
            for (int i = 0; i < 2; ++i) one(v[i], path + "." + key + "[" + std::to_string(i) + "]", out[i]);
        } else {
            T value = out[0];
            if (one(v, path + "." + key, value)) out = {value, value};
        }
    }

private:
    std::vector<std::string>& problems_;
};

AdvectionPreset parse_advection(Reader& rd, const json& v, const std::string& path, bool& ok) {
    ok = true;
    if (v.is_string()) {
        if (v.get<std::string>() == "none") return AdvectionPreset::none();
        rd.fail(path, "unknown advection preset '" + v.get<std::string>() + "'");
        ok = false;
        return {};
    }
    if (!rd.object(v, path)) {
        ok = false;
        return {};
    }
    rd.keys(v, path, {"type", "sx", "amplitude"});
    std::string type;
    rd.string(v, "type", path, type, {"none", "constant", "vortex"});
    double value = 0.0;
    if (type == "constant") {
        rd.number(v, "sx", path, value, false);
        return AdvectionPreset::constant(value);
    }
    if (type == "vortex") {
        rd.number(v, "amplitude", path, value, false);
        return AdvectionPreset::vortex(value);
    }
    if (type.empty()) {
        rd.fail(path + ".type", "missing");
        ok = false;
    }
    return AdvectionPreset::none();
}

bool parse_matrix(Reader& rd, const json& v, const std::string& path, Eigen::MatrixXd& out) {
    if (!v.is_array()) {
        rd.fail(path, "expected an array of rows");
        return false;
    }
    const std::size_t rows = v.size();
    std::size_t cols = rows ? (v[0].is_array() ? v[0].size() : 0) : 0;
    Eigen::MatrixXd M(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!v[r].is_array() || v[r].size() != cols) {
            rd.fail(path, "rows must be arrays of equal length");
            return false;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (!v[r][c].is_number()) {
                rd.fail(path, "entries must be numbers");
                return false;
            }
            M(r, c) = v[r][c].get<double>();
        }
    }
    out = M;
    return true;
}

}  // namespace

SchemeSpec RunConfig::scheme_spec() const {
    if (scheme.type == "crank-nicolson") return schemes::crank_nicolson();
    if (scheme.type == "preset") {
        auto s = schemes::by_name(scheme.name);
        if (!s) throw ConfigError({"scheme.name: unknown preset '" + scheme.name + "'"});
        return *s;
    }
    return SchemeSpec("dg", scheme.q, scheme.thetas, scheme.D);
}

QuadratureFlags RunConfig::quadrature_flags() const {
    if (quadrature == "exact") return QuadratureFlags::exact_all();
    if (quadrature == "classical") return QuadratureFlags::crank_nicolson_classical();
    return scheme.type == "crank-nicolson" ? QuadratureFlags::crank_nicolson_classical()
                                           : QuadratureFlags::exact_all();
}

std::optional<std::string> RunConfig::mms_name() const {
    if (problem.forcing.rfind("mms:", 0) == 0) return problem.forcing.substr(4);
    return std::nullopt;
}

RunConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("config: invalid JSON: ") + e.what()});
    }
    std::vector<std::string> problems;
    Reader rd(problems);
    RunConfig cfg;
    if (!rd.object(root, "config")) throw ConfigError(problems);
    rd.keys(root, "config",
            {"geometry", "problem", "scheme", "quadrature", "window", "solver", "experiment", "output"});

    auto int_item = [&](const json& v, const std::string& path, int& out) {
        if (!v.is_number_integer() || v.get<long long>() < 1) {
            rd.fail(path, "expected an integer >= 1");
            return false;
        }
        out = v.get<int>();
        return true;
    };
    auto positive_item = [&](const json& v, const std::string& path, double& out) {
        if (!v.is_number() || !(v.get<double>() > 0.0) || !std::isfinite(v.get<double>())) {
            rd.fail(path, "expected a positive number");
            return false;
        }
        out = v.get<double>();
        return true;
    };

    if (root.contains("geometry") && rd.object(root["geometry"], "geometry")) {
        const json& g = root["geometry"];
        rd.keys(g, "geometry", {"nx", "ny"});
        rd.pair(g, "nx", "geometry", cfg.geometry.nx, int_item);
        rd.pair(g, "ny", "geometry", cfg.geometry.ny, int_item);
        if (cfg.geometry.nx[0] != cfg.geometry.nx[1]) {
            rd.fail("geometry.nx", "both subdomains need the same nx (matching interface meshes)");
        }
    }
    const bool unequal_ny = cfg.geometry.ny[0] != cfg.geometry.ny[1];

    if (root.contains("problem") && rd.object(root["problem"], "problem")) {
        const json& p = root["problem"];
        rd.keys(p, "problem", {"nu", "advection", "B", "forcing", "initial", "consistent_initial"});
        rd.pair(p, "nu", "problem", cfg.problem.nu, positive_item);
        if (p.contains("advection")) {
            const json& a = p["advection"];
            bool ok = true;
            if (a.is_array()) {
                if (a.size() != 2) {
                    rd.fail("problem.advection", "expected a preset or a two-element array");
                } else {
                    for (int i = 0; i < 2; ++i) {
                        cfg.problem.advection[i] =
                            parse_advection(rd, a[i], "problem.advection[" + std::to_string(i) + "]", ok);
                    }
                }
            } else {
                const AdvectionPreset s = parse_advection(rd, a, "problem.advection", ok);
                cfg.problem.advection = {s, s};
            }
        }
        if (p.contains("B")) {
            Eigen::MatrixXd B;
            if (parse_matrix(rd, p["B"], "problem.B", B)) {
                if (B.rows() != 2 || B.cols() != 2) {
                    rd.fail("problem.B", "expected a 2x2 matrix");
                } else {
                    cfg.problem.coupling = B;
                }
            }
        }
        rd.string(p, "forcing", "problem", cfg.problem.forcing,
                  {"zero", "mms:smooth", "mms:poly1", "mms:poly2", "mms:antisymmetric"});
        rd.string(p, "initial", "problem", cfg.problem.initial, {"zero", "bump"});
        if (p.contains("consistent_initial")) {
            if (p["consistent_initial"].is_boolean()) {
                cfg.problem.consistent_initial = p["consistent_initial"].get<bool>();
            } else {
                rd.fail("problem.consistent_initial", "expected a boolean");
            }
        }
    }

    if (root.contains("scheme") && rd.object(root["scheme"], "scheme")) {
        const json& s = root["scheme"];
        rd.keys(s, "scheme", {"type", "name", "q", "n_s", "thetas", "D"});
        rd.string(s, "type", "scheme", cfg.scheme.type, {"crank-nicolson", "dg", "preset"});
        if (cfg.scheme.type == "preset") {
            rd.string(s, "name", "scheme", cfg.scheme.name);
            bool known = false;
            try {
                known = schemes::by_name(cfg.scheme.name).has_value();
            } catch (const Error&) {
            }
            if (!known) {
                rd.fail("scheme.name", "unknown preset '" + cfg.scheme.name + "'");
            }
        } else if (cfg.scheme.type == "dg") {
            int q = -1;
            if (!s.contains("q")) rd.fail("scheme.q", "missing");
            rd.integer(s, "q", "scheme", q, 0);
            bool shapes_ok = q >= 0;
            if (s.contains("thetas")) {
                if (!s["thetas"].is_array()) {
                    rd.fail("scheme.thetas", "expected an array of numbers");
                    shapes_ok = false;
                } else {
                    for (const auto& t : s["thetas"]) {
                        if (!t.is_number()) {
                            rd.fail("scheme.thetas", "expected an array of numbers");
                            shapes_ok = false;
                            break;
                        }
                        cfg.scheme.thetas.push_back(t.get<double>());
                    }
                }
            }
            if (s.contains("n_s")) {
                int ns = -1;
                rd.integer(s, "n_s", "scheme", ns, 0);
                if (ns >= 0 && ns != static_cast<int>(cfg.scheme.thetas.size())) {
                    rd.fail("scheme.n_s", "must equal the number of thetas");
                    shapes_ok = false;
                }
            }
            cfg.scheme.D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.scheme.thetas.size()), 1);
            if (s.contains("D") && !parse_matrix(rd, s["D"], "scheme.D", cfg.scheme.D)) shapes_ok = false;
            if (s.contains("D") && cfg.scheme.thetas.empty() && cfg.scheme.D.rows() == 0) {
                if (s.contains("n_s")) {
                int ns = -1;
                rd.integer(s, "n_s", "scheme", ns, 0);
                if (ns >= 0 && ns != static_cast<int>(cfg.scheme.thetas.size())) {
                    rd.fail("scheme.n_s", "must equal the number of thetas");
                    shapes_ok = false;
                }
            }
            cfg.scheme.D = Eigen::MatrixXd::Zero(0, 1);
            }
            if (shapes_ok) {
                cfg.scheme.q = q;
                try {
                    SchemeSpec("dg", q, cfg.scheme.thetas, cfg.scheme.D);
                } catch (const Error& e) {
                    rd.fail("scheme", std::string("side-condition check failed: ") + e.what());
                }
            }
        } else {
            if (s.contains("q") || s.contains("n_s") || s.contains("thetas") || s.contains("D") || s.contains("name")) {
                rd.fail("scheme", "crank-nicolson takes no further parameters");
            }
        }
    }

    if (unequal_ny && cfg.mms_name()) rd.fail("geometry.ny", "manufactured forcing needs equal ny on both subdomains");

    rd.string(root, "quadrature", "config", cfg.quadrature, {"auto", "exact", "classical"});

    if (root.contains("window") && rd.object(root["window"], "window")) {
        const json& w = root["window"];
        rd.keys(w, "window", {"t_f", "N", "M1", "M2", "r1", "r2", "N0"});
        rd.number(w, "t_f", "window", cfg.window.t_f, true);
        rd.integer(w, "N", "window", cfg.window.N, 1);
        rd.integer(w, "M1", "window", cfg.window.M[0], 1);
        rd.integer(w, "M2", "window", cfg.window.M[1], 1);
        rd.integer(w, "r1", "window", cfg.window.r[0], 0);
        rd.integer(w, "r2", "window", cfg.window.r[1], 0);
        rd.integer(w, "N0", "window", cfg.window.N0, 1);
    }

    if (root.contains("solver") && rd.object(root["solver"], "solver")) {
        const json& s = root["solver"];
        rd.keys(s, "solver", {"type", "tol", "max_iter"});
        std::string type = "direct";
        rd.string(s, "type", "solver", type, {"direct", "fixed-point"});
        cfg.solver.kind = type == "fixed-point" ? SolverKind::fixed_point : SolverKind::direct;
        rd.number(s, "tol", "solver", cfg.solver.tol, true);
        rd.integer(s, "max_iter", "solver", cfg.solver.max_iter, 1);
    }

    if (root.contains("experiment") && rd.object(root["experiment"], "experiment")) {
        const json& e = root["experiment"];
        rd.keys(e, "experiment", {"type", "levels", "target", "oracle", "oracle_steps", "jobs"});
        rd.string(e, "type", "experiment", cfg.experiment.type, {"run", "convergence", "conservation", "energy"});
        rd.integer(e, "levels", "experiment", cfg.experiment.levels, 3);
        std::string target = "l2";
        rd.string(e, "target", "experiment", target, {"l2", "nodal"});
        cfg.experiment.target = target == "nodal" ? ErrorTarget::nodal : ErrorTarget::l2;
        std::string oracle = "radau";
        rd.string(e, "oracle", "experiment", oracle, {"radau", "crank-nicolson"});
        cfg.experiment.oracle = oracle == "radau" ? ReferenceMethod::radau_iia : ReferenceMethod::crank_nicolson;
        rd.integer(e, "oracle_steps", "experiment", cfg.experiment.oracle_steps, 0);
        rd.integer(e, "jobs", "experiment", cfg.experiment.jobs, 1);
    }

    if (root.contains("output")) {
        if (root["output"].is_string()) {
            cfg.output = root["output"].get<std::string>();
        } else {
            rd.fail("output", "expected a directory path string");
        }
    }

    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"config: cannot open '" + path + "'"});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

BuiltProblem build_problem(const RunConfig& cfg) {
    ProblemSpec spec;
    spec.nu = cfg.problem.nu;
    spec.advection = cfg.problem.advection;
    spec.coupling = cfg.problem.coupling;
    const auto mms = cfg.mms_name();
    if (mms) {
        ManufacturedProblem mp = build_manufactured_problem(*mms, spec, cfg.geometry.nx[0], cfg.geometry.ny[0],
                                                            cfg.problem.consistent_initial);
        return {std::move(mp.mesh1), std::move(mp.mesh2), std::move(mp.map), std::move(mp.ops), std::move(mp.mms)};
    }
    if (cfg.problem.initial == "bump") {
        spec.initial[0] = [](double x, double y) { return std::sin(std::numbers::pi * x) * (1.0 - y * y); };
        spec.initial[1] = spec.initial[0];
    }
    BuiltProblem out{build_mesh(1, cfg.geometry.nx[0], cfg.geometry.ny[0]),
                     build_mesh(2, cfg.geometry.nx[1], cfg.geometry.ny[1]),
                     {},
                     {},
                     std::nullopt};
    out.map = match_interfaces(out.mesh1, out.mesh2);
    out.ops = assemble(out.mesh1, out.mesh2, out.map, spec);
    return out;
}

}  // namespace mrcouple
