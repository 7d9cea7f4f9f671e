#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dsmpc/linalg.hpp"

namespace dsmpc {

// Zero-mean disturbance generator with covariance Omega = L L'. The
// multivariate Laplace variant is the usual Gaussian scale mixture
// sqrt(E) L z with E ~ Exp(1), which keeps the covariance at Omega and has
// marginal excess kurtosis 3. Doubles are derived from the raw engine output
// so sequences depend only on the (fully specified) mt19937_64 stream.
class DisturbanceSampler {
  public:
    enum class Dist { Laplace, Gaussian };

    DisturbanceSampler(const Matrix& omega, uint64_t seed, Dist dist = Dist::Laplace)
        : dist_(dist), engine_(seed), seed_(seed) {
        if (omega.rows() != omega.cols()) throw StructuralError("Omega must be square");
        Eigen::LLT<Matrix> llt(symmetrized(omega));
        if (llt.info() != Eigen::Success)
            throw NumericalError("Omega is not positive definite: Cholesky failed");
        chol_ = llt.matrixL();
        nx_ = static_cast<int>(omega.rows());
    }

    Vector sample() {
        Vector z(nx_);
        for (int i = 0; i < nx_; ++i) z(i) = normal();
        if (dist_ == Dist::Gaussian) return chol_ * z;
        const double scale = std::sqrt(exponential());
        return scale * (chol_ * z);
    }

    const Matrix& cholesky_factor() const { return chol_; }
    uint64_t seed() const { return seed_; }
    Dist distribution() const { return dist_; }

  private:
    double uniform() {  // in [0,1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    double exponential() { return -std::log1p(-uniform()); }

    Dist dist_;
    std::mt19937_64 engine_;
    uint64_t seed_;
    Matrix chol_;
    int nx_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dsmpc
