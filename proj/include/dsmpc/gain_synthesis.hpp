#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsmpc/json_out.hpp"
#include "dsmpc/plant_model.hpp"

namespace dsmpc {

// One synthesised feedback gain L(mu) together with its certificates: P_bar
// solves the gamma-discounted output-weight Lyapunov equation and P_hat the
// undiscounted cost Lyapunov equation for the closed loop A + B L.
struct GainRecord {
    double mu = 0.0;
    Matrix L;      // n_u x n_x
    Matrix P_bar;  // n_x x n_x, PSD
    Matrix P_hat;  // n_x x n_x, PD
    double trace_bar = 0.0;  // gamma/(1-gamma) * tr(Omega P_bar)
    double trace_hat = 0.0;  // tr(Omega P_hat)
};

struct DpOptions {
    double tol = 1e-10;
    int max_iter = 100000;
};

namespace detail {

// Value iteration for the scalarised two-objective problem. Each sweep
// computes the greedy gain from the current pair of value matrices and then
// propagates both matrices through the resulting closed loop.
inline std::pair<Matrix, Matrix> dp_iterate(const PlantModel& m, double mu, Matrix p_bar,
                                            Matrix p_hat, double tol, int max_iter, Matrix* l_out,
                                            double* final_delta) {
    const Matrix ctc = m.C.transpose() * m.C;
    const Matrix bt = m.B.transpose();
    Matrix sigma, l, phi, p_bar_next, p_hat_next;
    double delta = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        sigma = m.gamma * (1.0 - mu) * p_bar + mu * p_hat;
        l = -(mu * m.R + bt * sigma * m.B).ldlt().solve(bt * sigma * m.A);
        phi = m.A + m.B * l;
        p_bar_next = symmetrized(ctc + m.gamma * phi.transpose() * p_bar * phi);
        p_hat_next =
            symmetrized(m.Q + l.transpose() * m.R * l + phi.transpose() * p_hat * phi);
        delta = (p_bar_next - p_bar).norm() + (p_hat_next - p_hat).norm();
        p_bar = p_bar_next;
        p_hat = p_hat_next;
        if (delta <= tol) {
            *l_out = l;
            if (final_delta) *final_delta = delta;
            return {p_bar, p_hat};
        }
    }
    if (final_delta) *final_delta = delta;
    std::ostringstream os;
    os << "DP iteration did not converge within " << max_iter << " sweeps (mu=" << mu
       << ", last delta=" << delta << ")";
    throw NonConvergenceError(os.str(), delta);
}

}  // namespace detail

// Runs the DP fixed point for one weighting parameter and certifies the
// result: the stationarity relation for L, both steady-state Lyapunov
// equations, and strict stability of the closed loop (and of sqrt(gamma)
// times it, which the discounted equation needs).
inline GainRecord dp_fixed_point(const PlantModel& m, double mu,
                                 std::optional<std::pair<Matrix, Matrix>> warm_start = {},
                                 const DpOptions& opts = {}) {
    require_valid(m);
    if (!(mu > 0.0 && mu <= 1.0)) throw StructuralError("mu must lie in (0,1]");
    if (!(opts.tol > 0.0)) throw StructuralError("tol must be positive");

    const int nx = m.nx();
    Matrix p_bar = warm_start ? warm_start->first : Matrix::Zero(nx, nx);
    Matrix p_hat = warm_start ? warm_start->second : Matrix::Zero(nx, nx);

    GainRecord rec;
    rec.mu = mu;
    double delta = 0.0;
    std::tie(rec.P_bar, rec.P_hat) =
        detail::dp_iterate(m, mu, std::move(p_bar), std::move(p_hat), opts.tol, opts.max_iter,
                           &rec.L, &delta);

    const Matrix phi = m.A + m.B * rec.L;
    const double rho = spectral_radius(phi);
    if (rho >= 1.0 - 1e-9 || std::sqrt(m.gamma) * rho >= 1.0 - 1e-9) {
        std::ostringstream os;
        os << "gain at mu=" << mu << " is not strictly stabilising (rho=" << rho << ")";
        throw CertificationError(os.str());
    }

    const Matrix sigma = m.gamma * (1.0 - mu) * rec.P_bar + mu * rec.P_hat;
    const Matrix bt = m.B.transpose();
    const Matrix l_stat = -(mu * m.R + bt * sigma * m.B).ldlt().solve(bt * sigma * m.A);
    const double stat_resid = (rec.L - l_stat).norm();
    const double bar_resid =
        (rec.P_bar - m.C.transpose() * m.C - m.gamma * phi.transpose() * rec.P_bar * phi).norm();
    const double hat_resid =
        (rec.P_hat - m.Q - rec.L.transpose() * m.R * rec.L - phi.transpose() * rec.P_hat * phi)
            .norm();
    const double scale_bar = 1.0 + rec.P_bar.norm();
    const double scale_hat = 1.0 + rec.P_hat.norm();
    if (bar_resid > 1e-8 * scale_bar || hat_resid > 1e-8 * scale_hat ||
        stat_resid > 1e-8 * (1.0 + rec.L.norm())) {
        std::ostringstream os;
        os << "fixed point at mu=" << mu << " failed certification (residuals " << bar_resid
           << ", " << hat_resid << ", " << stat_resid << ")";
        throw CertificationError(os.str());
    }

    rec.trace_bar = m.gamma / (1.0 - m.gamma) * (m.Omega * rec.P_bar).trace();
    rec.trace_hat = (m.Omega * rec.P_hat).trace();
    return rec;
}

// Ascending collection of gain records over a mu grid ending at 1.
struct GainLibrary {
    std::vector<double> grid;
    std::vector<GainRecord> records;
    std::string model_hash;
    std::vector<std::string> warnings;

    int size() const { return static_cast<int>(records.size()); }
};

// Logarithmically spaced grid from mu_min to 1; spacing widens towards 1,
// which concentrates records near 0 where the gains vary fastest.
inline std::vector<double> default_mu_grid(int count = 2000, double mu_min = 1e-15) {
    if (count < 1) throw StructuralError("grid count must be >= 1");
    if (!(mu_min > 0.0 && mu_min <= 1.0)) throw StructuralError("mu_min must lie in (0,1]");
    std::vector<double> grid(count);
    if (count == 1) {
        grid[0] = 1.0;
        return grid;
    }
    const double lmin = std::log(mu_min);
    for (int i = 0; i < count; ++i)
        grid[i] = std::exp(lmin * (1.0 - static_cast<double>(i) / (count - 1)));
    grid.back() = 1.0;
    return grid;
}

inline GainLibrary generate_gain_library(const PlantModel& m, const std::vector<double>& grid,
                                         const DpOptions& opts = {}) {
    require_valid(m);
    if (grid.empty()) throw StructuralError("mu grid is empty");
    for (size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0 && grid[i] <= 1.0))
            throw StructuralError("mu grid values must lie in (0,1]");
        if (i > 0 && grid[i] <= grid[i - 1])
            throw StructuralError("mu grid must be strictly ascending");
    }
    if (grid.back() != 1.0) throw StructuralError("mu grid must end at exactly 1");

    GainLibrary lib;
    lib.grid = grid;
    lib.model_hash = model_hash(m);
    lib.records.reserve(grid.size());
    std::optional<std::pair<Matrix, Matrix>> warm;
    for (double mu : grid) {
        try {
            GainRecord rec = dp_fixed_point(m, mu, warm, opts);
            warm = std::make_pair(rec.P_bar, rec.P_hat);
            lib.records.push_back(std::move(rec));
        } catch (const std::exception& ex) {
            std::ostringstream os;
            os << "gain synthesis failed at mu=" << mu << ": " << ex.what();
            throw CertificationError(os.str());
        }
    }

    for (size_t i = 1; i < lib.records.size(); ++i) {
        const auto& a = lib.records[i - 1];
        const auto& b = lib.records[i];
        if (b.trace_bar < a.trace_bar - 1e-8 * (1.0 + std::abs(a.trace_bar)) ||
            b.trace_hat > a.trace_hat + 1e-8 * (1.0 + std::abs(a.trace_hat))) {
            std::ostringstream os;
            os << "trace monotonicity violated between mu=" << a.mu << " and mu=" << b.mu;
            throw CertificationError(os.str());
        }
    }
    if (lib.records.size() >= 2 &&
        (lib.records[0].L - lib.records[1].L).norm() < 1e-12) {
        lib.warnings.push_back(
            "grid starts too low to distinguish records: |L(mu_1) - L(mu_2)| < 1e-12");
    }
    return lib;
}

// --- library (de)serialisation ---------------------------------------------

inline std::string to_json_text(const GainLibrary& lib) {
    JsonWriter w;
    w.begin_object();
    w.field("format_version", 1);
    w.field("model_hash", lib.model_hash);
    w.key("grid").values(lib.grid);
    w.key("records").begin_array();
    for (const auto& r : lib.records) {
        w.begin_object();
        w.field("mu", r.mu);
        w.key("L").matrix(r.L);
        w.key("P_bar").matrix(r.P_bar);
        w.key("P_hat").matrix(r.P_hat);
        w.field("trace_bar", r.trace_bar);
        w.field("trace_hat", r.trace_hat);
        w.end_object();
    }
    w.end_array();
    if (!lib.warnings.empty()) {
        w.key("warnings").begin_array();
        for (const auto& s : lib.warnings) w.value(s);
        w.end_array();
    }
    w.end_object();
    return w.str();
}

inline GainLibrary library_from_json(const nlohmann::json& j,
                                     const std::string& expected_model_hash = "") {
    GainLibrary lib;
    if (j.value("format_version", 0) != 1)
        throw StructuralError("unsupported gain library format_version");
    lib.model_hash = j.at("model_hash").get<std::string>();
    if (!expected_model_hash.empty() && lib.model_hash != expected_model_hash)
        throw StructuralError("stale gain library: model hash " + lib.model_hash +
                              " does not match expected " + expected_model_hash);
    lib.grid = j.at("grid").get<std::vector<double>>();
    for (const auto& rj : j.at("records")) {
        GainRecord r;
        r.mu = rj.at("mu").get<double>();
        r.L = matrix_from_json(rj.at("L"), "L");
        r.P_bar = matrix_from_json(rj.at("P_bar"), "P_bar");
        r.P_hat = matrix_from_json(rj.at("P_hat"), "P_hat");
        r.trace_bar = rj.at("trace_bar").get<double>();
        r.trace_hat = rj.at("trace_hat").get<double>();
        lib.records.push_back(std::move(r));
    }
    if (lib.grid.size() != lib.records.size())
        throw StructuralError("gain library grid/record count mismatch");
    if (j.contains("warnings")) lib.warnings = j.at("warnings").get<std::vector<std::string>>();
    return lib;
}

}  // namespace dsmpc
