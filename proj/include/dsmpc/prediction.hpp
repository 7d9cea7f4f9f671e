#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

#include "dsmpc/gain_synthesis.hpp"
#include "dsmpc/plant_model.hpp"

namespace dsmpc {

// Stacked finite-horizon operators for one feedback gain K, plus the two
// quadratic forms evaluated online: W1 (discounted output-energy constraint)
// and W2 (LQ cost). Also carries the factorisations the online solver needs,
// so a record can be built once per gain and shared read-only.
struct PredictionOperators {
    int nx = 0, nu = 0, nc = 0, N = 0;
    GainRecord gain;  // K = gain.L, terminal matrices P_bar / P_hat
    Matrix Phi;       // A + B K
    Matrix Mx;        // N*nx x nx, rows Phi, Phi^2, ..., Phi^N
    Matrix Mc;        // N*nx x N*nu, block lower-triangular convolution map
    Matrix H;         // diag(gamma C'C, ..., gamma^(N-1) C'C, gamma^N P_bar)
    Matrix W1, W2;    // (nx+N*nu)^2, symmetric
    double trace_bar = 0.0;

    // Block partitions, x part first.
    Matrix W1xx, W1cx, W1cc;  // W1cx is the lower-left (c-rows, x-cols) block
    Matrix W2xx, W2cx, W2cc;

    // Online-solver cache.
    Eigen::LLT<Matrix> W2cc_llt;  // of W2cc (+ ridge when ill-conditioned)
    Matrix qcqp_evecs;            // U with L2^-1 W1cc L2^-T = U diag(evals) U'
    Vector qcqp_evals;            // >= 0, entries below cutoff treated as zero
    Matrix c_o_map;               // -pinv(W1cc) W1cx, minimiser of the constraint form
    Matrix S_c;  // W1xx - W1xc pinv(W1cc) W1cx: x' S_c x = min_c [x;c]' W1 [x;c]
    Matrix S_J;  // [I; c_o_map]' W2 [I; c_o_map]: cost at the constraint minimiser
    bool ridged = false;

    int cdim() const { return N * nu; }
};

// P_bar / P_hat certificates for an arbitrary stabilising feedback K; used by
// the fixed-gain controller mode where no synthesised record is available.
inline GainRecord gain_record_from_feedback(const PlantModel& m, const Matrix& k_fb,
                                            double mu = std::numeric_limits<double>::quiet_NaN()) {
    if (k_fb.rows() != m.nu() || k_fb.cols() != m.nx())
        throw StructuralError("feedback gain must be n_u x n_x");
    GainRecord rec;
    rec.mu = mu;
    rec.L = k_fb;
    const Matrix phi = m.A + m.B * k_fb;
    rec.P_bar = solve_discounted_lyapunov(phi, m.C.transpose() * m.C, m.gamma);
    rec.P_hat =
        solve_discounted_lyapunov(phi, m.Q + k_fb.transpose() * m.R * k_fb, 1.0);
    rec.trace_bar = m.gamma / (1.0 - m.gamma) * (m.Omega * rec.P_bar).trace();
    rec.trace_hat = (m.Omega * rec.P_hat).trace();
    return rec;
}

inline PredictionOperators build_prediction_operators(const PlantModel& m,
                                                      const GainRecord& gain) {
    PredictionOperators ops;
    ops.nx = m.nx();
    ops.nu = m.nu();
    ops.nc = m.nc();
    ops.N = m.N;
    ops.gain = gain;
    ops.trace_bar = gain.trace_bar;
    ops.Phi = m.A + m.B * gain.L;

    const int nx = ops.nx, nu = ops.nu, N = ops.N;
    const int cd = N * nu;

    ops.Mx.resize(N * nx, nx);
    Matrix phi_pow = ops.Phi;
    for (int i = 0; i < N; ++i) {
        ops.Mx.block(i * nx, 0, nx, nx) = phi_pow;
        phi_pow = ops.Phi * phi_pow;
    }

    ops.Mc = Matrix::Zero(N * nx, cd);
    // Block (i,j), i from 1, holds Phi^(i-1-j) B; fill diagonals outward.
    Matrix diag_block = m.B;
    for (int d = 0; d < N; ++d) {
        for (int i = d; i < N; ++i)
            ops.Mc.block(i * nx, (i - d) * nu, nx, nu) = diag_block;
        diag_block = ops.Phi * diag_block;
    }

    const Matrix ctc = m.C.transpose() * m.C;
    ops.H = Matrix::Zero(N * nx, N * nx);
    double g = m.gamma;
    for (int i = 1; i < N; ++i) {
        ops.H.block((i - 1) * nx, (i - 1) * nx, nx, nx) = g * ctc;
        g *= m.gamma;
    }
    ops.H.block((N - 1) * nx, (N - 1) * nx, nx, nx) = g * gain.P_bar;

    const int dim = nx + cd;
    const Matrix hmx = ops.H * ops.Mx;
    const Matrix hmc = ops.H * ops.Mc;
    ops.W1.resize(dim, dim);
    ops.W1.topLeftCorner(nx, nx) = ctc + ops.Mx.transpose() * hmx;
    ops.W1.topRightCorner(nx, cd) = ops.Mx.transpose() * hmc;
    ops.W1.bottomLeftCorner(cd, nx) = ops.Mc.transpose() * hmx;
    ops.W1.bottomRightCorner(cd, cd) = ops.Mc.transpose() * hmc;
    ops.W1 = symmetrized(ops.W1);

    // W2 from per-step selector maps: T_i sends (x,c) to the i-step state and
    // S_i selects c_i; stage terms carry Q + K'RK with the K'R cross blocks.
    const Matrix& k_fb = gain.L;
    const Matrix qk = m.Q + k_fb.transpose() * m.R * k_fb;
    const Matrix kr = k_fb.transpose() * m.R;
    Matrix t_i(nx, dim);
    t_i.setZero();
    t_i.leftCols(nx) = Matrix::Identity(nx, nx);
    ops.W2 = Matrix::Zero(dim, dim);
    for (int i = 0; i < N; ++i) {
        ops.W2 += t_i.transpose() * qk * t_i;
        const Matrix cross = t_i.transpose() * kr;  // dim x nu, lands in c_i columns
        ops.W2.middleCols(nx + i * nu, nu) += cross;
        ops.W2.middleRows(nx + i * nu, nu) += cross.transpose();
        ops.W2.block(nx + i * nu, nx + i * nu, nu, nu) += m.R;
        t_i.leftCols(nx) = ops.Mx.block(i * nx, 0, nx, nx);
        t_i.rightCols(cd) = ops.Mc.block(i * nx, 0, nx, cd);
    }
    ops.W2 += t_i.transpose() * gain.P_hat * t_i;  // t_i now maps to the N-step state
    ops.W2 = symmetrized(ops.W2);

    ops.W1xx = ops.W1.topLeftCorner(nx, nx);
    ops.W1cx = ops.W1.bottomLeftCorner(cd, nx);
    ops.W1cc = ops.W1.bottomRightCorner(cd, cd);
    ops.W2xx = ops.W2.topLeftCorner(nx, nx);
    ops.W2cx = ops.W2.bottomLeftCorner(cd, nx);
    ops.W2cc = ops.W2.bottomRightCorner(cd, cd);

    // Solver cache. W2cc is PD since R is; ridge only if badly conditioned.
    Eigen::SelfAdjointEigenSolver<Matrix> es2(ops.W2cc);
    const double emax = es2.eigenvalues().maxCoeff();
    const double emin = es2.eigenvalues().minCoeff();
    Matrix w2cc_eff = ops.W2cc;
    if (emin <= 0.0 || emax / emin > 1e12) {
        w2cc_eff += 1e-12 * Matrix::Identity(cd, cd);
        ops.ridged = true;
    }
    ops.W2cc_llt.compute(w2cc_eff);
    if (ops.W2cc_llt.info() != Eigen::Success)
        throw NumericalError("W2 c-block is not positive definite");

    const Matrix l2 = ops.W2cc_llt.matrixL();
    Matrix inner = l2.triangularView<Eigen::Lower>().solve(ops.W1cc);
    inner = l2.triangularView<Eigen::Lower>().solve(Matrix(inner.transpose()));
    Eigen::SelfAdjointEigenSolver<Matrix> es1(symmetrized(inner));
    ops.qcqp_evecs = es1.eigenvectors();
    ops.qcqp_evals = es1.eigenvalues().cwiseMax(0.0);

    const Matrix w1cc_pinv = psd_pseudoinverse(ops.W1cc);
    ops.c_o_map = -w1cc_pinv * ops.W1cx;
    ops.S_c = symmetrized(ops.W1xx + ops.W1cx.transpose() * ops.c_o_map);
    Matrix lift(dim, nx);
    lift.topRows(nx) = Matrix::Identity(nx, nx);
    lift.bottomRows(cd) = ops.c_o_map;
    ops.S_J = symmetrized(lift.transpose() * ops.W2 * lift);
    return ops;
}

// LHS of the tightened constraint: [x;c]' W1 [x;c] + gamma/(1-gamma) tr(Omega P_bar).
inline double constraint_lhs(const PredictionOperators& ops, const Vector& x, const Vector& c) {
    if (x.size() != ops.nx || c.size() != ops.cdim())
        throw StructuralError("constraint_lhs: dimension mismatch");
    Vector y(x.size() + c.size());
    y << x, c;
    return quad_form(ops.W1, y) + ops.trace_bar;
}

// Predicted cost [x;c]' W2 [x;c].
inline double cost_value(const PredictionOperators& ops, const Vector& x, const Vector& c) {
    if (x.size() != ops.nx || c.size() != ops.cdim())
        throw StructuralError("cost_value: dimension mismatch");
    Vector y(x.size() + c.size());
    y << x, c;
    return quad_form(ops.W2, y);
}

// Direct forward recursion of the finite-horizon cost; independent of the W2
// assembly and kept as its oracle.
inline double recursive_cost_oracle(const PlantModel& m, const Matrix& k_fb, const Matrix& p_term,
                                    const Vector& x, const Vector& c) {
    if (c.size() != static_cast<Eigen::Index>(m.N) * m.nu())
        throw StructuralError("recursive_cost_oracle: c has wrong length");
    Vector xbar = x;
    double cost = 0.0;
    for (int i = 0; i < m.N; ++i) {
        const Vector ci = c.segment(i * m.nu(), m.nu());
        const Vector u = k_fb * xbar + ci;
        cost += xbar.dot(m.Q * xbar) + u.dot(m.R * u);
        xbar = m.A * xbar + m.B * u;
    }
    cost += xbar.dot(p_term * xbar);
    return cost;
}

}  // namespace dsmpc
