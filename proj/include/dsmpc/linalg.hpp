#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "dsmpc/errors.hpp"

namespace dsmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// y' M y with Neumaier compensated accumulation. The online constraint
// budget recursion feeds its own output back in, so the quadratic forms it is
// built from are evaluated with compensated sums.
inline double quad_form(const Matrix& m, const Vector& y) {
    double sum = 0.0, comp = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double yj = y(j);
        if (yj == 0.0) continue;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double term = y(i) * m(i, j) * yj;
            const double t = sum + term;
            if (std::abs(sum) >= std::abs(term))
                comp += (sum - t) + term;
            else
                comp += (term - t) + sum;
            sum = t;
        }
    }
    return sum + comp;
}

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline double min_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(sym));
    return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(sym));
    return es.eigenvalues().maxCoeff();
}

// Moore-Penrose pseudoinverse of a symmetric PSD matrix; eigenvalues below
// cutoff_rel * lambda_max are treated as zero.
inline Matrix psd_pseudoinverse(const Matrix& sym, double cutoff_rel = 1e-10) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(sym));
    const Vector& ev = es.eigenvalues();
    const double cutoff = cutoff_rel * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    Vector inv = Vector::Zero(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// Numerical rank with singular-value cutoff 1e-10 * sigma_max.
inline Eigen::Index numerical_rank(const Matrix& m, double cutoff_rel = 1e-10) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    const double cutoff = cutoff_rel * sv(0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++rank;
    return rank;
}

inline uint64_t fnv1a64(const std::string& bytes, uint64_t seed = 1469598103934665603ull) {
    uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= static_cast<uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// splitmix64 step; used to derive independent per-run seeds from a base seed.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t s = base ^ (0x9e3779b97f4a7c15ull + index * 0xbf58476d1ce4e5b9ull);
    splitmix64(s);
    return splitmix64(s);
}

}  // namespace dsmpc
