#pragma once

#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

#include "dsmpc/prediction.hpp"

namespace dsmpc {

struct QcqpSolution {
    Vector c_star;
    double multiplier = 0.0;
    bool constraint_active = false;
    double objective = 0.0;
    double constraint_value = 0.0;
    int iterations = 0;
};

// Minimiser of the constraint form over c and the attained value
// (including the covariance trace term).
inline std::pair<Vector, double> minimize_constraint(const PredictionOperators& ops,
                                                     const Vector& x) {
    if (x.size() != ops.nx) throw StructuralError("minimize_constraint: x has wrong length");
    Vector c_o = ops.c_o_map * x;
    const double value = x.dot(ops.S_c * x) + ops.trace_bar;
    return {std::move(c_o), value};
}

inline double constraint_min_value(const PredictionOperators& ops, const Vector& x) {
    return x.dot(ops.S_c * x) + ops.trace_bar;
}

namespace detail {

// Scalar pieces of the multiplier path. In the eigenbasis of
// L^-1 W1cc L^-T the stationary point of the Lagrangian is
// w_j(lambda) = -(p_j + lambda q_j) / (1 + lambda d_j), and the constraint
// residual g(lambda) = sum_j d_j w_j^2 + 2 q_j w_j + const is non-increasing.
struct MultiplierPath {
    Vector p, q, d;
    double const_term = 0.0;  // x' W1xx x + trace_bar - epsilon

    void eval(double lambda, Vector& w, double* g, double* dg) const {
        double gv = const_term, dgv = 0.0;
        for (Eigen::Index j = 0; j < d.size(); ++j) {
            const double denom = 1.0 + lambda * d(j);
            const double wj = -(p(j) + lambda * q(j)) / denom;
            const double dwj = (p(j) * d(j) - q(j)) / (denom * denom);
            w(j) = wj;
            gv += d(j) * wj * wj + 2.0 * q(j) * wj;
            dgv += 2.0 * (d(j) * wj + q(j)) * dwj;
        }
        *g = gv;
        if (dg) *dg = dgv;
    }
};

}  // namespace detail

// Minimises [x;c]' W2 [x;c] subject to [x;c]' W1 [x;c] + trace_bar <= epsilon.
// If the unconstrained minimiser satisfies the constraint it is returned with
// a zero multiplier; otherwise the unique positive multiplier at which the
// constraint holds with equality is found by bracketing followed by
// safeguarded Newton steps on the monotone residual g(lambda).
inline QcqpSolution solve_mpc(const PredictionOperators& ops, const Vector& x, double epsilon) {
    if (x.size() != ops.nx) throw StructuralError("solve_mpc: x has wrong length");
    const double tol = 1e-9 * (1.0 + std::abs(epsilon));

    const double min_value = constraint_min_value(ops, x);
    if (min_value > epsilon + tol) {
        std::ostringstream os;
        os << "QCQP infeasible: attainable constraint minimum " << min_value
           << " exceeds budget " << epsilon;
        throw InfeasibleError(os.str(), min_value - epsilon);
    }

    const int cd = ops.cdim();
    QcqpSolution sol;

    const Vector b2 = ops.W2cx * x;
    Vector c_u = ops.W2cc_llt.solve(-b2);
    const double val_u = constraint_lhs(ops, x, c_u);
    if (val_u <= epsilon + tol) {
        sol.c_star = std::move(c_u);
        sol.multiplier = 0.0;
        sol.constraint_active = false;
        sol.objective = cost_value(ops, x, sol.c_star);
        sol.constraint_value = val_u;
        return sol;
    }

    // Transform into the shared eigenbasis once per solve.
    const Matrix l2 = ops.W2cc_llt.matrixL();
    const Vector b1 = ops.W1cx * x;
    detail::MultiplierPath path;
    path.d = ops.qcqp_evals;
    path.p = ops.qcqp_evecs.transpose() *
             l2.triangularView<Eigen::Lower>().solve(b2);
    path.q = ops.qcqp_evecs.transpose() *
             l2.triangularView<Eigen::Lower>().solve(b1);
    const double d_cut = 1e-10 * std::max(path.d.maxCoeff(), 0.0);
    for (Eigen::Index j = 0; j < path.d.size(); ++j) {
        if (path.d(j) <= d_cut) {
            path.d(j) = 0.0;
            path.q(j) = 0.0;  // PSD structure: constraint gradient lives in range(W1cc)
        }
    }
    path.const_term = x.dot(ops.W1xx * x) + ops.trace_bar - epsilon;

    Vector w(cd);
    int evals = 0;
    const int max_evals = 200;
    std::vector<std::pair<double, double>> samples;

    auto eval_g = [&](double lambda, double* dg) {
        double g;
        path.eval(lambda, w, &g, dg);
        ++evals;
        samples.emplace_back(lambda, g);
        return g;
    };

    double lo = 0.0, hi = 1.0;
    double g_hi = eval_g(hi, nullptr);
    while (g_hi > tol && evals < max_evals) {
        lo = hi;
        hi *= 8.0;
        g_hi = eval_g(hi, nullptr);
    }
    if (g_hi > tol) throw NumericalError("QCQP multiplier bracketing exhausted its budget");

    double lambda = hi, g = g_hi;
    while (std::abs(g) > tol && evals < max_evals) {
        double dg;
        path.eval(lambda, w, &g, &dg);
        double next = (dg < 0.0) ? lambda - g / dg : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        g = eval_g(next, nullptr);
        if (g > tol)
            lo = next;
        else if (g < -tol)
            hi = next;
        lambda = next;
        if (hi - lo <= 1e-15 * hi) {
            lambda = hi;  // feasible side of a collapsed bracket
            g = eval_g(lambda, nullptr);
            break;
        }
    }
    if (std::abs(g) > tol && evals >= max_evals)
        throw NumericalError("QCQP multiplier root-finding did not converge in 200 evaluations");

    // Path residual must be non-increasing in lambda across sampled iterates.
    for (size_t a = 0; a < samples.size(); ++a)
        for (size_t b = a + 1; b < samples.size(); ++b) {
            const auto& [la, ga] = samples[a];
            const auto& [lb, gb] = samples[b];
            if ((la < lb && gb > ga + 1e-7 * (1.0 + std::abs(path.const_term))) ||
                (lb < la && ga > gb + 1e-7 * (1.0 + std::abs(path.const_term))))
                throw NumericalError("QCQP residual not monotone in the multiplier");
        }

    path.eval(lambda, w, &g, nullptr);
    const Matrix l2t = l2.transpose();
    sol.c_star = l2t.triangularView<Eigen::Upper>().solve(ops.qcqp_evecs * w);
    sol.multiplier = lambda;
    sol.constraint_active = true;
    sol.objective = cost_value(ops, x, sol.c_star);
    sol.constraint_value = constraint_lhs(ops, x, sol.c_star);
    sol.iterations = evals;
    return sol;
}

}  // namespace dsmpc
