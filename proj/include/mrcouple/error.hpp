#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mrcouple {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad dimensions, non-contiguous intervals, zero counts.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Interface traces of the two meshes do not coincide.
class MatchError : public Error {
public:
    using Error::Error;
};

/// A property check was requested on data that does not satisfy its hypotheses.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Factorization or solve failed.
class SolverError : public Error {
public:
    SolverError(const std::string& what, long pivot = -1)
        : Error(what), pivot_(pivot) {}

    /// Index of the failing pivot when the factorization reports one, else -1.
    long pivot() const noexcept { return pivot_; }

private:
    long pivot_;
};

/// The lagged fixed-point iteration did not contract.
class ContractionError : public Error {
public:
    ContractionError(const std::string& what, double step_ratio, double factor, int iterations)
        : Error(what), step_ratio_(step_ratio), factor_(factor), iterations_(iterations) {}

    double step_restriction_ratio() const noexcept { return step_ratio_; }
    double contraction_factor() const noexcept { return factor_; }
    int iterations() const noexcept { return iterations_; }

private:
    double step_ratio_;
    double factor_;
    int iterations_;
};

/// Configuration validation failure carrying every problem found.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& items) {
        std::string out;
        for (const auto& s : items) {
            if (!out.empty()) out += "; ";
            out += s;
        }
        return out;
    }

    std::vector<std::string> problems_;
};

}  // namespace mrcouple
