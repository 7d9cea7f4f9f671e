#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsmpc/json_out.hpp"
#include "dsmpc/linalg.hpp"
#include "dsmpc/lyapunov.hpp"

namespace dsmpc {

// Problem data for the constrained regulation problem: linear dynamics
// x+ = A x + B u + w with E[w] = 0, E[w w'] = Omega, stage cost
// |x|_Q^2 + |u|_R^2, and a budget e on the discounted sum of probabilities
// that |C x| >= 1, discounted by gamma.
struct PlantModel {
    Matrix A;      // n_x x n_x
    Matrix B;      // n_x x n_u
    Matrix C;      // n_c x n_x
    Matrix Q;      // n_x x n_x, PSD
    Matrix R;      // n_u x n_u, PD
    Matrix Omega;  // n_x x n_x, PD disturbance covariance
    double gamma = 0.0;
    double e = 0.0;
    int N = 0;  // prediction horizon

    int nx() const { return static_cast<int>(A.rows()); }
    int nu() const { return static_cast<int>(B.cols()); }
    int nc() const { return static_cast<int>(C.rows()); }
};

struct ValidationReport {
    bool controllable = false;
    bool observable = false;
    std::vector<std::string> rank_deficiencies;
    double spectral_radius_A = 0.0;
    bool ok() const { return controllable && observable && rank_deficiencies.empty(); }
};

namespace detail {
inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& name, const std::string& against) {
    if (m.rows() != rows || m.cols() != cols) {
        std::ostringstream os;
        os << name << " is " << m.rows() << "x" << m.cols() << " but " << against
           << " requires " << rows << "x" << cols;
        throw StructuralError(os.str());
    }
}
}  // namespace detail

inline void check_dimensions(const PlantModel& m) {
    if (m.A.rows() == 0 || m.A.rows() != m.A.cols())
        throw StructuralError("A must be square and non-empty");
    const Eigen::Index nx = m.A.rows();
    if (m.B.rows() != nx) {
        std::ostringstream os;
        os << "B has " << m.B.rows() << " rows but A is " << nx << "x" << nx;
        throw StructuralError(os.str());
    }
    if (m.B.cols() == 0) throw StructuralError("B must have at least one column");
    if (m.C.cols() != nx) {
        std::ostringstream os;
        os << "C has " << m.C.cols() << " columns but A is " << nx << "x" << nx;
        throw StructuralError(os.str());
    }
    detail::require_shape(m.Q, nx, nx, "Q", "A");
    detail::require_shape(m.Omega, nx, nx, "Omega", "A");
    detail::require_shape(m.R, m.B.cols(), m.B.cols(), "R", "B");
}

// Symmetric PSD square root via eigendecomposition, negative ripple clamped.
inline Matrix psd_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
    Vector ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// Checks the standing assumptions: (A,B) controllable, (A, Q^(1/2))
// observable, R and Omega positive definite, Q PSD, gamma in (0,1), e > 0,
// N >= 1. Rank tests use a singular-value cutoff of 1e-10 * sigma_max.
inline ValidationReport validate_model(const PlantModel& m) {
    check_dimensions(m);
    ValidationReport rep;
    const int nx = m.nx();
    const int nu = m.nu();

    Matrix ctrb(nx, nx * nu);
    Matrix apow = Matrix::Identity(nx, nx);
    for (int i = 0; i < nx; ++i) {
        ctrb.block(0, i * nu, nx, nu) = apow * m.B;
        apow = m.A * apow;
    }
    rep.controllable = numerical_rank(ctrb) == nx;
    if (!rep.controllable) rep.rank_deficiencies.push_back("(A,B) not controllable");

    const Matrix qh = psd_sqrt(m.Q);
    Matrix obsv(nx * nx, nx);
    apow = Matrix::Identity(nx, nx);
    for (int i = 0; i < nx; ++i) {
        obsv.block(i * nx, 0, nx, nx) = qh * apow;
        apow = apow * m.A;
    }
    rep.observable = numerical_rank(obsv) == nx;
    if (!rep.observable) rep.rank_deficiencies.push_back("(A,Q^1/2) not observable");

    if (min_eigenvalue(m.R) <= 0.0) rep.rank_deficiencies.push_back("R not positive definite");
    if (min_eigenvalue(m.Omega) <= 0.0)
        rep.rank_deficiencies.push_back("Omega not positive definite");
    const double qmin = min_eigenvalue(m.Q);
    if (qmin < -1e-10 * std::max(1.0, m.Q.norm()))
        rep.rank_deficiencies.push_back("Q not positive semidefinite");
    if (!(m.gamma > 0.0 && m.gamma < 1.0))
        rep.rank_deficiencies.push_back("gamma outside (0,1)");
    if (!(m.e > 0.0)) rep.rank_deficiencies.push_back("e not positive");
    if (m.N < 1) rep.rank_deficiencies.push_back("horizon N < 1");

    rep.spectral_radius_A = spectral_radius(m.A);
    return rep;
}

inline void require_valid(const PlantModel& m) {
    const ValidationReport rep = validate_model(m);
    if (!rep.ok()) {
        std::string msg = "invalid model:";
        for (const auto& s : rep.rank_deficiencies) msg += " " + s + ";";
        throw StructuralError(msg);
    }
}

// --- JSON serialisation ---------------------------------------------------

inline void write_model_fields(JsonWriter& w, const PlantModel& m) {
    w.key("A").matrix(m.A);
    w.key("B").matrix(m.B);
    w.key("C").matrix(m.C);
    w.key("Q").matrix(m.Q);
    w.key("R").matrix(m.R);
    w.key("Omega").matrix(m.Omega);
    w.field("gamma", m.gamma);
    w.field("e", m.e);
    w.field("N", m.N);
}

inline std::string to_json_text(const PlantModel& m) {
    JsonWriter w;
    w.begin_object();
    write_model_fields(w, m);
    w.end_object();
    return w.str();
}

// Hash of the canonical serialisation; gain-library files echo it so that a
// library built for a different model is rejected.
inline std::string model_hash(const PlantModel& m) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json_text(m))));
    return buf;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& name) {
    if (!j.is_array() || j.empty())
        throw StructuralError(name + " must be a non-empty nested array");
    const size_t rows = j.size();
    if (!j[0].is_array()) {
        // also accept a flat array as a column vector
        Matrix m(rows, 1);
        for (size_t i = 0; i < rows; ++i) m(static_cast<Eigen::Index>(i), 0) = j[i].get<double>();
        return m;
    }
    const size_t cols = j[0].size();
    Matrix m(rows, cols);
    for (size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols)
            throw StructuralError(name + " rows have inconsistent lengths");
        for (size_t k = 0; k < cols; ++k)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
    }
    return m;
}

inline PlantModel model_from_json(const nlohmann::json& j) {
    PlantModel m;
    for (const char* req : {"A", "B", "C", "Q", "R", "Omega", "gamma", "e", "N"})
        if (!j.contains(req)) throw StructuralError(std::string("model missing field ") + req);
    m.A = matrix_from_json(j.at("A"), "A");
    m.B = matrix_from_json(j.at("B"), "B");
    m.C = matrix_from_json(j.at("C"), "C");
    m.Q = matrix_from_json(j.at("Q"), "Q");
    m.R = matrix_from_json(j.at("R"), "R");
    m.Omega = matrix_from_json(j.at("Omega"), "Omega");
    m.gamma = j.at("gamma").get<double>();
    m.e = j.at("e").get<double>();
    m.N = j.at("N").get<int>();
    check_dimensions(m);
    return m;
}

}  // namespace dsmpc
