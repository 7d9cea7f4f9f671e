#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

#include "dsmpc/errors.hpp"
#include "dsmpc/linalg.hpp"

namespace dsmpc {

inline double spectral_radius(const Matrix& m) {
    if (m.rows() != m.cols()) {
        std::ostringstream os;
        os << "spectral_radius needs a square matrix, got " << m.rows() << "x" << m.cols();
        throw StructuralError(os.str());
    }
    if (m.rows() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Solves P = scale * Phi' P Phi + S for symmetric S >= 0 and scale in (0,1],
// i.e. P = sum_j scale^j (Phi')^j S Phi^j. The vectorised system
// (I - scale * Phi' (x) Phi') vec(P) = vec(S) is solved exactly by LU, which
// is cheap at the problem sizes of interest; the result is symmetrised.
inline Matrix solve_discounted_lyapunov(const Matrix& phi, const Matrix& s, double scale) {
    if (phi.rows() != phi.cols()) throw StructuralError("Phi must be square");
    if (s.rows() != phi.rows() || s.cols() != phi.cols())
        throw StructuralError("S must have the same shape as Phi");
    if (!(scale > 0.0 && scale <= 1.0)) throw StructuralError("scale must lie in (0,1]");

    const double rho = std::sqrt(scale) * spectral_radius(phi);
    if (rho >= 1.0 - 1e-9) {
        std::ostringstream os;
        os << "discounted Lyapunov series diverges: sqrt(scale)*rho(Phi) = " << rho;
        throw DivergenceError(os.str());
    }

    const Eigen::Index n = phi.rows();
    const Matrix phit = phi.transpose();
    const Matrix coeff =
        Matrix::Identity(n * n, n * n) - scale * kronecker(phit, phit);
    const Matrix ssym = symmetrized(s);
    Vector rhs(n * n);
    for (Eigen::Index j = 0; j < n; ++j) rhs.segment(j * n, n) = ssym.col(j);

    Vector sol = coeff.partialPivLu().solve(rhs);
    Matrix p(n, n);
    for (Eigen::Index j = 0; j < n; ++j) p.col(j) = sol.segment(j * n, n);
    p = symmetrized(p);

    const double resid = (p - scale * phit * p * phi - ssym).norm();
    if (resid > 1e-8 * (1.0 + p.norm())) {
        std::ostringstream os;
        os << "Lyapunov residual " << resid << " exceeds tolerance";
        throw NumericalError(os.str());
    }
    return p;
}

}  // namespace dsmpc
