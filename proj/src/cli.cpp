#include "mrcouple/cli.hpp"

#include "mrcouple/config.hpp"
#include "mrcouple/error.hpp"
#include "mrcouple/log.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

namespace mrcouple {

void configure_logging_from_env() {
    const char* env = std::getenv("MRCOUPLE_LOG");
    const std::string level = env ? env : "";
    if (level == "error") {
        spdlog::set_level(spdlog::level::err);
    } else if (level == "debug") {
        spdlog::set_level(spdlog::level::debug);
    } else {
        spdlog::set_level(spdlog::level::info);
    }
}

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr double conservation_tolerance = 1e-10;

struct Setup {
    RunConfig cfg;
    BuiltProblem problem;
    SchemeSpec scheme;
    SimulationOptions options;
    std::shared_ptr<ReferenceTrajectory> oracle;  ///< only for manufactured forcing
};

// Reference trajectory for manufactured runs; also seeds N0 > 1 and multistep history.
std::shared_ptr<ReferenceTrajectory> make_oracle(const RunConfig& cfg, const FeOperators& ops) {
    return std::make_shared<ReferenceTrajectory>(
        reference_solve(ops, cfg.window.t_f, cfg.experiment.oracle, cfg.experiment.oracle_steps));
}

Setup prepare(const RunConfig& cfg) {
    Setup s{cfg, build_problem(cfg), cfg.scheme_spec(), {}, nullptr};
    s.options.solver = cfg.solver.kind;
    s.options.tol = cfg.solver.tol;
    s.options.max_iter = cfg.solver.max_iter;
    s.options.quadrature = cfg.quadrature_flags();
    const bool needs_init = cfg.window.N0 > 1 || s.scheme.reach_back() > 1;
    if (s.problem.mms || needs_init) s.oracle = make_oracle(cfg, s.problem.ops);
    if (needs_init) {
        const auto oracle = s.oracle;
        const FeOperators* ops = &s.problem.ops;
        s.options.initializer = [oracle, ops](int i, double t) -> Eigen::VectorXd {
            // Before t = 0 the state is held at the initial data.
            if (t <= 0.0) return ops->sub[i].initial;
            return oracle->subdomain(i, t);
        };
    }
    return s;
}

ConservationMode conservation_mode(const WindowConfig& w, const QuadratureFlags& q) {
    if (w.r[0] == w.r[1]) return ConservationMode::strong;
    return q.coupling == TimeQuadrature::trapezoid ? ConservationMode::cn : ConservationMode::weak;
}

const char* mode_name(ConservationMode m) {
    switch (m) {
        case ConservationMode::strong: return "strong";
        case ConservationMode::weak: return "weak";
        case ConservationMode::cn: return "cn";
    }
    return "?";
}

double finite_or_null_max(const std::vector<WindowRecord>& rec, double WindowRecord::*field) {
    double out = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : rec) {
        const double v = r.*field;
        if (std::isfinite(v)) out = std::isfinite(out) ? std::max(out, v) : v;
    }
    return out;
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
}

int cmd_run(const RunConfig& cfg, const std::string& out_dir) {
    Setup s = prepare(cfg);
    spdlog::info("run: {} windows, M = ({}, {}), r = ({}, {}), scheme {}", cfg.window.N, cfg.window.M[0],
                 cfg.window.M[1], cfg.window.r[0], cfg.window.r[1], s.scheme.name());
    const Trajectory traj = run_simulation(s.problem.ops, s.scheme, cfg.window, s.options);
    ensure_dir(out_dir);
    {
        std::ofstream os(fs::path(out_dir) / "trajectory.csv");
        traj.write_csv(os);
    }
    const EnergyReport energy = energy_report(traj);
    double max_residual = 0.0;
    int iterations = 0;
    for (const auto& w : traj.windows) {
        max_residual = std::max(max_residual, w.diagnostics.residual);
        iterations += w.diagnostics.iterations;
    }
    ordered_json summary;
    summary["windows"] = cfg.window.N;
    summary["t_f"] = cfg.window.t_f;
    summary["M"] = {cfg.window.M[0], cfg.window.M[1]};
    summary["r"] = {cfg.window.r[0], cfg.window.r[1]};
    summary["scheme"] = s.scheme.name();
    summary["solver"] = cfg.solver.kind == SolverKind::direct ? "direct" : "fixed-point";
    summary["solver_max_residual"] = max_residual;
    summary["solver_iterations"] = iterations;
    summary["energy_initial"] = energy.energies.front();
    summary["energy_final"] = energy.energies.back();
    summary["energy_monotone"] = energy.monotone;
    summary["max_flux_conservation_residual"] =
        number_or_null(finite_or_null_max(traj.records, &WindowRecord::flux_conservation_residual));
    summary["max_interfacial_energy_term"] =
        number_or_null(finite_or_null_max(traj.records, &WindowRecord::interfacial_energy_term));
    if (s.problem.mms) {
        const ErrorReport err = error_norms(traj, *s.oracle, s.problem.ops);
        summary["manufactured"] = s.problem.mms->name;
        summary["err_l2_u1"] = err.l2[0];
        summary["err_l2_u2"] = err.l2[1];
        summary["err_sync_max"] = err.sync_max();
    }
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_convergence(RunConfig cfg, int levels, int jobs, const std::string& out_dir) {
    Setup s = prepare(cfg);
    if (!s.problem.mms) {
        std::cerr << "convergence: problem.forcing must be a manufactured preset (mms:<name>)\n";
        return 1;
    }
    const RateTable table = convergence_study(s.problem.ops, s.scheme, cfg.window, levels, cfg.experiment.target,
                                              *s.oracle, s.options, jobs);
    ensure_dir(out_dir);
    {
        std::ofstream os(fs::path(out_dir) / "rates.csv");
        table.write_csv(os);
    }
    table.write_csv(std::cout);
    std::cout << "fitted rate (" << (cfg.experiment.target == ErrorTarget::l2 ? "l2" : "nodal")
              << "): " << table.rate << "\n";
    for (const auto& n : table.notes) std::cout << "note: " << n << "\n";
    return 0;
}

int check_conservation(const Setup& s) {
    const RunConfig& cfg = s.cfg;
    const FeOperators& ops = s.problem.ops;
    if (!ops.conservation_compatible()) {
        // Reuses the library diagnostic naming the violated identities.
        WindowSolution empty;
        try {
            check_flux_conservation(empty, cfg.window, ConservationMode::strong, ops);
        } catch (const PreconditionError& e) {
            std::cout << "conservation: FAIL (" << e.what() << ")\n";
            return 1;
        }
        std::cout << "conservation: FAIL (coupling data not conservation compatible)\n";
        return 1;
    }
    const Trajectory traj = run_simulation(ops, s.scheme, cfg.window, s.options);
    const ConservationMode mode = conservation_mode(cfg.window, s.options.quadrature);
    double worst = 0.0;
    int worst_window = 0;
    for (const auto& w : traj.windows) {
        const ConservationReport rep = check_flux_conservation(w, cfg.window, mode, ops);
        if (!std::isfinite(rep.relative) || rep.relative > worst || worst_window == 0) {
            worst = rep.relative;
            worst_window = w.index;
        }
        if (!std::isfinite(rep.relative)) break;
    }
    const bool ok = std::isfinite(worst) && worst <= conservation_tolerance;
    std::cout << "conservation (" << mode_name(mode) << "): " << (ok ? "PASS" : "FAIL")
              << " max relative residual " << worst << " at window " << worst_window << " (tolerance "
              << conservation_tolerance << ")\n";
    return ok ? 0 : 1;
}

int check_energy(const Setup& s) {
    const FeOperators& ops = s.problem.ops;
    if (ops.has_forcing()) {
        std::cout << "energy: FAIL (forcing present; the dissipation property needs f = 0 and g = 0)\n";
        return 1;
    }
    if (!ops.coupling_psd()) {
        std::cout << "energy: FAIL (coupling matrix B is not positive semidefinite)\n";
        return 1;
    }
    const Trajectory traj = run_simulation(ops, s.scheme, s.cfg.window, s.options);
    const EnergyReport rep = energy_report(traj);
    const double scale = std::max(rep.energies.front(), std::numeric_limits<double>::min());
    double worst_term = -std::numeric_limits<double>::infinity();
    for (const auto& r : traj.records) {
        if (std::isfinite(r.interfacial_energy_term)) worst_term = std::max(worst_term, r.interfacial_energy_term);
    }
    const bool terms_ok = !(worst_term > 1e-12 * scale);
    const bool ok = rep.monotone && terms_ok;
    std::cout << "energy: " << (ok ? "PASS" : "FAIL") << " E(0) = " << rep.energies.front()
              << ", E(T) = " << rep.energies.back() << ", max increase " << rep.max_increase
              << ", max interfacial term " << worst_term << "\n";
    return ok ? 0 : 1;
}

}  // namespace

int run_cli(int argc, char** argv) {
    configure_logging_from_env();
    CLI::App app{"Multirate coupled advection-diffusion solver"};
    app.require_subcommand(1);

    std::string config_path, out_dir, suite;
    int levels = 0, jobs = 0;

    auto* run = app.add_subcommand("run", "Run one simulation and write trajectory.csv and summary.json");
    run->add_option("--config", config_path, "JSON configuration")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory (default: config output)");

    auto* conv = app.add_subcommand("convergence", "Temporal convergence study; writes rates.csv");
    conv->add_option("--config", config_path, "JSON configuration")->required()->check(CLI::ExistingFile);
    conv->add_option("--levels", levels, "Number of refinement levels (>= 3)")->check(CLI::Range(3, 20));
    conv->add_option("--jobs", jobs, "Levels solved in parallel")->check(CLI::Range(1, 256));
    conv->add_option("--out", out_dir, "Output directory (default: config output)");

    auto* check = app.add_subcommand("check", "Property suite; exit 0 iff the property holds");
    check->add_option("--suite", suite, "conservation or energy")
        ->required()
        ->check(CLI::IsMember({"conservation", "energy"}));
    check->add_option("--config", config_path, "JSON configuration")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (out_dir.empty()) out_dir = cfg.output;
        if (run->parsed()) return cmd_run(cfg, out_dir);
        if (conv->parsed()) {
            return cmd_convergence(cfg, levels > 0 ? levels : cfg.experiment.levels,
                                   jobs > 0 ? jobs : cfg.experiment.jobs, out_dir);
        }
        Setup s = prepare(cfg);
        return suite == "conservation" ? check_conservation(s) : check_energy(s);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error:\n";
        for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
        return 2;
    } catch (const StructuralError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const ContractionError& e) {
        std::cerr << "error: " << e.what() << " (step restriction ratio " << e.step_restriction_ratio()
                  << ", contraction factor " << e.contraction_factor() << ", " << e.iterations()
                  << " iterations)\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mrcouple
