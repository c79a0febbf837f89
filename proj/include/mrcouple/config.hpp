#pragma once

#include "mrcouple/coupling.hpp"
#include "mrcouple/fespace.hpp"
#include "mrcouple/mesh.hpp"
#include "mrcouple/timepoly.hpp"
#include "mrcouple/verify.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace mrcouple {

/// Validated experiment description (see README for the JSON layout).
struct RunConfig {
    struct Geometry {
        std::array<int, 2> nx{8, 8};
        std::array<int, 2> ny{8, 8};
    } geometry;

    struct Problem {
        std::array<double, 2> nu{1.0, 1.0};
        std::array<AdvectionPreset, 2> advection{};
        Eigen::Matrix2d coupling = (Eigen::Matrix2d() << 1.0, -1.0, -1.0, 1.0).finished();
        std::string forcing = "zero";  ///< "zero" or "mms:<preset>"
        std::string initial = "bump";  ///< "zero" or "bump"; ignored for mms forcing
        bool consistent_initial = true;
    } problem;

    struct Scheme {
        std::string type = "crank-nicolson";  ///< "crank-nicolson", "dg" or "preset"
        std::string name;                     ///< preset name
        int q = 1;
        std::vector<double> thetas;
        Eigen::MatrixXd D;
    } scheme;

    std::string quadrature = "auto";  ///< "auto", "exact" or "classical"
    WindowConfig window;

    struct Solver {
        SolverKind kind = SolverKind::direct;
        double tol = 1e-10;
        int max_iter = 200;
    } solver;

    struct Experiment {
        std::string type = "run";  ///< "run", "convergence", "conservation" or "energy"
        int levels = 5;
        ErrorTarget target = ErrorTarget::l2;
        ReferenceMethod oracle = ReferenceMethod::radau_iia;
        int oracle_steps = 0;
        int jobs = 1;
    } experiment;

    std::string output = "out";

    SchemeSpec scheme_spec() const;
    QuadratureFlags quadrature_flags() const;
    std::optional<std::string> mms_name() const;
};

/// Strict parse: unknown keys, wrong types and invalid values are all
/// collected and reported together through ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Meshes, operators and scheme built from a configuration.
struct BuiltProblem {
    Mesh mesh1, mesh2;
    InterfaceMap map;
    FeOperators ops;
    std::optional<ManufacturedCase> mms;
};

BuiltProblem build_problem(const RunConfig& cfg);

}  // namespace mrcouple
