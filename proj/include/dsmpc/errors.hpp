#pragma once

#include <stdexcept>
#include <string>

namespace dsmpc {

// Structural problems: wrong shapes, bad parameter ranges, malformed input.
struct StructuralError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// An iteration diverged or cannot converge (e.g. spectral radius outside the
// admissible disc).
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A computed quantity failed its accuracy check.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An iterative scheme hit its iteration budget.
struct NonConvergenceError : std::runtime_error {
    NonConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual(residual) {}
    double residual;
};

// A certified property of a synthesised gain does not hold.
struct CertificationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A constrained problem has no solution; `gap` is by how much the best
// achievable constraint value exceeds the budget.
struct InfeasibleError : std::runtime_error {
    InfeasibleError(const std::string& what, double gap)
        : std::runtime_error(what), gap(gap) {}
    double gap;
};

}  // namespace dsmpc
