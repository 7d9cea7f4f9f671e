#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dsmpc/controller.hpp"
#include "dsmpc/disturbance.hpp"

namespace dsmpc {

// Everything needed to instantiate one closed-loop experiment.
struct SimSetup {
    PlantModel model;
    std::shared_ptr<const OperatorTable> table;  // dynamic modes; optional for fixed
    std::optional<GainRecord> fixed_gain;        // fixed mode without a table
    GainMode mode = GainMode::Fixed;
    Vector x0;
    std::optional<double> epsilon0;  // defaults to model.e
    InitialGainPolicy policy = InitialGainPolicy::LargestFeasible;
    double initial_mu = 0.0;  // used with InitialGainPolicy::Value
    DisturbanceSampler::Dist dist = DisturbanceSampler::Dist::Laplace;
};

inline Controller make_controller(const SimSetup& s) {
    if (s.table)
        return Controller(s.model, s.table, s.mode, s.x0, s.epsilon0, s.policy, s.initial_mu);
    if (!s.fixed_gain) throw StructuralError("SimSetup needs a table or a fixed gain");
    return Controller(s.model, *s.fixed_gain, s.x0, s.epsilon0);
}

struct Trajectory {
    std::vector<StepInfo> steps;  // k = 0..T-1
    std::vector<Vector> states;   // k = 0..T
    uint64_t seed = 0;
    std::string config_hash;
    double final_mu = 0.0;
    int final_mu_index = 0;
};

// Per-run aggregates; everything the Monte Carlo estimators need.
struct RunStats {
    double stage_cost_sum = 0.0;
    double violation_discounted = 0.0;  // sum_{k<=min(T,H)} gamma^k 1{|Cx_k| >= 1}
    double final_mu = 0.0;
    int final_mu_index = 0;
    int steps = 0;
    int capped_selections = 0;
    uint64_t seed = 0;
};

namespace detail {

inline RunStats rollout(const SimSetup& s, int T, uint64_t seed, int violation_horizon,
                        Trajectory* traj) {
    Controller ctl = make_controller(s);
    DisturbanceSampler sampler(s.model.Omega, seed, s.dist);
    RunStats stats;
    stats.seed = seed;
    stats.steps = T;
    Vector x = s.x0;
    double gk = 1.0;
    if (traj) {
        traj->seed = seed;
        traj->states.reserve(T + 1);
        traj->steps.reserve(T);
    }
    for (int k = 0; k < T; ++k) {
        StepInfo info = ctl.step(x);
        stats.stage_cost_sum += info.stage_cost;
        if (info.violation && k <= violation_horizon) stats.violation_discounted += gk;
        if (info.selection_capped) ++stats.capped_selections;
        if (traj) {
            traj->states.push_back(x);
            traj->steps.push_back(info);
        }
        x = s.model.A * x + s.model.B * info.u + sampler.sample();
        gk *= s.model.gamma;
    }
    if (T <= violation_horizon && (s.model.C * x).norm() >= 1.0)
        stats.violation_discounted += gk;
    stats.final_mu = ctl.current_ops().gain.mu;
    stats.final_mu_index = ctl.mu_index();
    if (traj) {
        traj->states.push_back(x);
        traj->final_mu = stats.final_mu;
        traj->final_mu_index = stats.final_mu_index;
    }
    return stats;
}

}  // namespace detail

inline Trajectory run_closed_loop(const SimSetup& s, int T, uint64_t seed,
                                  int violation_horizon = 150) {
    Trajectory traj;
    detail::rollout(s, T, seed, violation_horizon, &traj);
    return traj;
}

inline RunStats run_stats(const SimSetup& s, int T, uint64_t seed, int violation_horizon = 150) {
    return detail::rollout(s, T, seed, violation_horizon, nullptr);
}

struct Metrics {
    double J_average = 0.0;
    double J_average_se = 0.0;
    double P_violation = 0.0;
    double P_violation_se = 0.0;
    double mu_convergence = 0.0;    // fraction of runs ending at the top of the grid
    double mu_final_mean = 0.0;
    int feasibility_failures = 0;   // aborting failures would have thrown; kept for the record
    int capped_selections = 0;      // times the method-1 feasibility safeguard engaged
    int runs = 0;
    int steps = 0;
    int violation_horizon = 0;
    uint64_t base_seed = 0;
    std::string mode;
    std::string config_hash;
};

inline Metrics metrics_from_runs(const std::vector<RunStats>& runs, int T, int violation_horizon,
                                 uint64_t base_seed, int grid_top_index,
                                 const std::string& mode = "", const std::string& hash = "") {
    if (runs.empty()) throw StructuralError("metrics need at least one run");
    Metrics m;
    m.runs = static_cast<int>(runs.size());
    m.steps = T;
    m.violation_horizon = violation_horizon;
    m.base_seed = base_seed;
    m.mode = mode;
    m.config_hash = hash;
    const double n = static_cast<double>(runs.size());
    double jsum = 0.0, vsum = 0.0, musum = 0.0, conv = 0.0;
    for (const auto& r : runs) {
        jsum += r.stage_cost_sum / r.steps;
        vsum += r.violation_discounted;
        musum += r.final_mu;
        if (r.final_mu_index == grid_top_index) conv += 1.0;
        m.capped_selections += r.capped_selections;
    }
    m.J_average = jsum / n;
    m.P_violation = vsum / n;
    m.mu_final_mean = musum / n;
    m.mu_convergence = conv / n;
    double jvar = 0.0, vvar = 0.0;
    for (const auto& r : runs) {
        const double dj = r.stage_cost_sum / r.steps - m.J_average;
        const double dv = r.violation_discounted - m.P_violation;
        jvar += dj * dj;
        vvar += dv * dv;
    }
    if (runs.size() > 1) {
        m.J_average_se = std::sqrt(jvar / (n - 1.0) / n);
        m.P_violation_se = std::sqrt(vvar / (n - 1.0) / n);
    }
    return m;
}

// Independent rollouts with per-run derived seeds. Run r always uses
// derive_seed(base_seed, r), so results are reproducible regardless of the
// thread schedule and runs are individually replayable.
inline std::vector<RunStats> monte_carlo_runs(const SimSetup& s, int runs, int T,
                                              int violation_horizon, uint64_t base_seed,
                                              int threads = 0) {
    if (runs < 1) throw StructuralError("runs must be >= 1");
    if (threads <= 0)
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, runs);
    std::vector<RunStats> out(runs);
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::string first_error;
    auto worker = [&]() {
        for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1)) {
            const uint64_t seed = derive_seed(base_seed, static_cast<uint64_t>(r));
            try {
                out[r] = run_stats(s, T, seed, violation_horizon);
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error.empty()) {
                    std::ostringstream os;
                    os << "run " << r << " (seed " << seed << ") failed: " << ex.what();
                    first_error = os.str();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (!first_error.empty()) throw NumericalError(first_error);
    return out;
}

inline Metrics monte_carlo(const SimSetup& s, int runs, int T, int violation_horizon,
                           uint64_t base_seed, int threads = 0, const std::string& mode = "",
                           const std::string& hash = "") {
    const auto stats = monte_carlo_runs(s, runs, T, violation_horizon, base_seed, threads);
    const int top = s.table ? s.table->size() - 1 : 0;
    return metrics_from_runs(stats, T, violation_horizon, base_seed, top, mode, hash);
}

inline std::string to_json_text(const Metrics& m) {
    JsonWriter w;
    w.begin_object();
    w.field("config_hash", m.config_hash);
    w.field("mode", m.mode);
    w.field("base_seed", m.base_seed);
    w.field("runs", m.runs);
    w.field("steps", m.steps);
    w.field("violation_horizon", m.violation_horizon);
    w.field("J_average", m.J_average);
    w.field("J_average_se", m.J_average_se);
    w.field("J_average_half_width", 3.0 * m.J_average_se);
    w.field("P_violation", m.P_violation);
    w.field("P_violation_se", m.P_violation_se);
    w.field("P_violation_half_width", 3.0 * m.P_violation_se);
    w.field("mu_convergence", m.mu_convergence);
    w.field("mu_final_mean", m.mu_final_mean);
    w.field("feasibility_failures", m.feasibility_failures);
    w.field("capped_selections", m.capped_selections);
    w.end_object();
    return w.str();
}

inline std::string trajectory_to_csv(const Trajectory& traj, const PlantModel& model) {
    std::ostringstream os;
    os << "# config_hash=" << traj.config_hash << " seed=" << traj.seed << "\n";
    const int nx = model.nx(), nu = model.nu();
    os << "k";
    for (int i = 0; i < nx; ++i) os << ",x" << i;
    for (int i = 0; i < nu; ++i) os << ",u" << i;
    os << ",eps,mu_bar,lambda,stage_cost,violation\n";
    auto num = [](double v) {
        std::string s = fmt_double(v);
        return s == "null" ? std::string("nan") : s;
    };
    for (size_t k = 0; k < traj.steps.size(); ++k) {
        const auto& st = traj.steps[k];
        os << k;
        for (int i = 0; i < nx; ++i) os << "," << num(traj.states[k](i));
        for (int i = 0; i < nu; ++i) os << "," << num(st.u(i));
        os << "," << num(st.epsilon) << "," << num(st.mu_bar) << "," << num(st.lambda) << ","
           << num(st.stage_cost) << "," << (st.violation ? 1 : 0) << "\n";
    }
    // terminal state row: no input was applied
    const Vector& xT = traj.states.back();
    os << traj.steps.size();
    for (int i = 0; i < nx; ++i) os << "," << num(xT(i));
    for (int i = 0; i < nu; ++i) os << ",";
    os << ",,,,," << ((model.C * xT).norm() >= 1.0 ? 1 : 0) << "\n";
    return os.str();
}

// --- numerical property suites ---------------------------------------------

struct PropertyResult {
    std::string suite;
    bool pass = false;
    double margin = 0.0;     // signed distance to the tolerance, >= 0 passes
    double tolerance = 0.0;
    std::string detail;
};

struct PropertyReport {
    std::vector<PropertyResult> suites;
    bool all_pass() const {
        for (const auto& s : suites)
            if (!s.pass) return false;
        return true;
    }
};

inline std::string to_json_text(const PropertyReport& rep) {
    JsonWriter w;
    w.begin_object();
    w.key("suites").begin_array();
    for (const auto& s : rep.suites) {
        w.begin_object();
        w.field("suite", s.suite);
        w.field("pass", s.pass);
        w.field("margin", s.margin);
        w.field("tolerance", s.tolerance);
        if (!s.detail.empty()) w.field("detail", s.detail);
        w.end_object();
    }
    w.end_array();
    w.end_object();
    return w.str();
}

struct VerifyOptions {
    uint64_t seed = 20240901;
    int mc_draws = 100000;      // Monte Carlo identity sample size
    int series_terms = 2000;    // truncation for the discounted-series checks
    int avg_runs = 100;         // closed-loop time-average check
    int avg_steps = 400;
    GainMode mode = GainMode::Fixed;  // mode used by the closed-loop checks
    bool closed_loop = true;          // include the time-average / recursion suite
    double tol_rel = 1e-6;
    double tol_psd = 1e-8;
    int threads = 0;
};

namespace detail {

inline double tail_sum_truncated(const PlantModel& m, const Matrix& phi, const Vector& xN,
                                 int terms) {
    double sum = 0.0;
    Vector x = xN;
    double g = std::pow(m.gamma, m.N);
    for (int i = 0; i < terms; ++i) {
        sum += g * (m.C * x).squaredNorm();
        x = phi * x;
        g *= m.gamma;
    }
    return sum;
}

inline double trace_sum_truncated(const PlantModel& m, const Matrix& phi, int terms) {
    const Matrix ctc = m.C.transpose() * m.C;
    Matrix cov = Matrix::Zero(m.nx(), m.nx());
    double sum = 0.0, g = 1.0;
    for (int i = 0; i < terms; ++i) {
        sum += g * (ctc * cov).trace();
        cov = phi * cov * phi.transpose() + m.Omega;
        g *= m.gamma;
    }
    return sum;
}

// N-horizon LQ value with terminal weight via the backward Riccati recursion.
inline double finite_lq_value(const PlantModel& m, const Matrix& p_term, const Vector& x0) {
    Matrix pi = p_term;
    for (int i = 0; i < m.N; ++i) {
        const Matrix bt_pi = m.B.transpose() * pi;
        const Matrix gain = (m.R + bt_pi * m.B).ldlt().solve(bt_pi * m.A);
        pi = symmetrized(m.Q + m.A.transpose() * pi * (m.A - m.B * gain));
    }
    return x0.dot(pi * x0);
}

struct FrozenState {
    Controller controller;  // about to execute step k
    Vector x;               // state at the frozen step
    StepInfo info;          // outcome of stepping the twin controller at x
};

// Runs a controller a few steps in closed loop, then freezes it right before
// a step so the Monte Carlo identities can average over the next disturbance.
inline FrozenState freeze_state(const SimSetup& s, int warmup, uint64_t seed) {
    Controller ctl = make_controller(s);
    DisturbanceSampler sampler(s.model.Omega, seed, s.dist);
    Vector x = s.x0;
    for (int k = 0; k < warmup; ++k) {
        const StepInfo info = ctl.step(x);
        x = s.model.A * x + s.model.B * info.u + sampler.sample();
    }
    Controller twin = ctl;
    const StepInfo info = twin.step(x);
    return {std::move(twin), std::move(x), info};
}

}  // namespace detail

// Runs the numerical suites behind the closed-form identities, orderings and
// Monte Carlo relations the synthesis and controller rely on, and reports
// pass/fail with margins. Failures are report entries, never exceptions.
inline PropertyReport verify_properties(const PlantModel& model, const GainLibrary& lib,
                                        const VerifyOptions& opts = {}) {
    PropertyReport rep;
    std::mt19937_64 rng(opts.seed);
    auto unit_vec = [&rng](int n) {
        std::normal_distribution<double> nd;
        Vector v(n);
        for (int i = 0; i < n; ++i) v(i) = nd(rng);
        return Vector(v / std::max(v.norm(), 1e-300));
    };

    const int m = lib.size();
    std::vector<int> probe = {0, m / 2, m - 1};
    if (m < 3) probe = {0, m - 1};

    {  // discounted tail of the output energy vs the terminal quadratic
        PropertyResult r{"discounted_tail_identity", true, 0.0, opts.tol_rel, ""};
        double worst = 0.0;
        for (int idx : probe) {
            const auto& rec = lib.records[idx];
            const Matrix phi = model.A + model.B * rec.L;
            for (int trial = 0; trial < 5; ++trial) {
                const Vector xN = unit_vec(model.nx());
                const double closed = std::pow(model.gamma, model.N) * xN.dot(rec.P_bar * xN);
                const double series = detail::tail_sum_truncated(model, phi, xN, opts.series_terms);
                worst = std::max(worst, std::abs(closed - series) / (1.0 + std::abs(closed)));
            }
        }
        r.margin = opts.tol_rel - worst;
        r.pass = worst <= opts.tol_rel;
        rep.suites.push_back(r);
    }

    {  // discounted covariance trace series vs gamma/(1-gamma) tr(Omega P_bar)
        PropertyResult r{"covariance_trace_identity", true, 0.0, opts.tol_rel, ""};
        double worst = 0.0;
        for (int idx : probe) {
            const auto& rec = lib.records[idx];
            const Matrix phi = model.A + model.B * rec.L;
            const double closed = rec.trace_bar;
            const double series = detail::trace_sum_truncated(model, phi, opts.series_terms);
            worst = std::max(worst, std::abs(closed - series) / (1.0 + std::abs(closed)));
        }
        r.margin = opts.tol_rel - worst;
        r.pass = worst <= opts.tol_rel;
        rep.suites.push_back(r);
    }

    {  // semidefinite orderings of the certificates along the grid
        PropertyResult rbar{"certificate_order_pbar", true, 0.0, opts.tol_psd, ""};
        PropertyResult rhat{"certificate_order_phat", true, 0.0, opts.tol_psd, ""};
        double worst_bar = 0.0, worst_hat = 0.0;
        std::uniform_int_distribution<int> pick(0, m - 1);
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i + 1 < m; i += std::max(1, m / 16)) pairs.emplace_back(i, i + 1);
        pairs.emplace_back(0, m - 1);
        for (int t = 0; t < 24; ++t) {
            int i = pick(rng), j = pick(rng);
            if (i > j) std::swap(i, j);
            if (i != j) pairs.emplace_back(i, j);
        }
        for (auto [i, j] : pairs) {
            worst_bar = std::max(
                worst_bar, -min_eigenvalue(lib.records[j].P_bar - lib.records[i].P_bar));
            worst_hat = std::max(
                worst_hat, -min_eigenvalue(lib.records[i].P_hat - lib.records[j].P_hat));
        }
        rbar.margin = opts.tol_psd - worst_bar;
        rbar.pass = worst_bar <= opts.tol_psd;
        rhat.margin = opts.tol_psd - worst_hat;
        rhat.pass = worst_hat <= opts.tol_psd;
        rep.suites.push_back(rbar);
        rep.suites.push_back(rhat);
    }

    {  // midpoint concavity of tr S(mu), S = (1-mu) P_bar + mu P_hat
        PropertyResult r{"scalarised_trace_concavity", true, 0.0, opts.tol_psd, ""};
        double worst = -std::numeric_limits<double>::infinity();
        DpOptions tight;
        tight.tol = 1e-12;
        auto trace_s = [&](double mu, std::optional<std::pair<Matrix, Matrix>> warm) {
            const GainRecord rec = dp_fixed_point(model, mu, warm, tight);
            return std::make_pair((1.0 - mu) * rec.P_bar.trace() + mu * rec.P_hat.trace(),
                                  std::make_pair(rec.P_bar, rec.P_hat));
        };
        for (double center : {0.05, 0.15, 0.3, 0.5, 0.7, 0.9}) {
            const double h = 0.04 * center;
            std::optional<std::pair<Matrix, Matrix>> warm;
            auto [t1, w1] = trace_s(center - h, warm);
            auto [t2, w2] = trace_s(center, w1);
            auto [t3, w3] = trace_s(center + h, w2);
            worst = std::max(worst, t1 + t3 - 2.0 * t2);
        }
        r.margin = opts.tol_psd - worst;
        r.pass = worst <= opts.tol_psd;
        rep.suites.push_back(r);
    }

    {  // finite-horizon value is monotone in the terminal weight
        PropertyResult r{"terminal_weight_monotonicity", true, 0.0, opts.tol_psd, ""};
        std::normal_distribution<double> nd;
        double worst = -std::numeric_limits<double>::infinity();
        for (int t = 0; t < 20; ++t) {
            Matrix g1(model.nx(), model.nx()), g2(model.nx(), model.nx());
            for (int i = 0; i < model.nx(); ++i)
                for (int j = 0; j < model.nx(); ++j) {
                    g1(i, j) = nd(rng);
                    g2(i, j) = nd(rng);
                }
            const Matrix p1 = g1.transpose() * g1;
            const Matrix p2 = p1 + g2.transpose() * g2;
            const Vector x0 = unit_vec(model.nx()) * 3.0;
            const double v1 = detail::finite_lq_value(model, p1, x0);
            const double v2 = detail::finite_lq_value(model, p2, x0);
            worst = std::max(worst, (v1 - v2) / (1.0 + std::abs(v2)));
        }
        r.margin = opts.tol_psd - worst;
        r.pass = worst <= opts.tol_psd;
        rep.suites.push_back(r);
    }

    // Frozen-state Monte Carlo identities need a live controller.
    auto table = std::make_shared<const OperatorTable>(model, lib, opts.threads);
    SimSetup setup;
    setup.model = model;
    setup.table = table;
    setup.mode = opts.mode;
    setup.x0 = Vector::Zero(model.nx());
    setup.policy = InitialGainPolicy::SmallestFeasible;
    const double tb0 = table->record(0).trace_bar;
    setup.epsilon0 = std::max(model.e, 1.5 * tb0 + 1.0);

    {  // conditional-expectation identity for the budget recursion
        PropertyResult r{"budget_recursion_identity", true, 0.0, 3.0, "margin is |diff|/se"};
        auto frozen = detail::freeze_state(setup, 4, derive_seed(opts.seed, 101));
        const PredictionOperators& ops = frozen.controller.previous_ops();
        const Vector& cstar = frozen.controller.previous_c();
        const Vector ec = Controller::shifted_tail(cstar, ops.nu);
        const double rhs =
            constraint_lhs(ops, frozen.x, cstar) - (model.C * frozen.x).squaredNorm();
        DisturbanceSampler sampler(model.Omega, derive_seed(opts.seed, 102), setup.dist);
        const Vector base = ops.Phi * frozen.x + model.B * cstar.head(ops.nu);
        double sum = 0.0, sumsq = 0.0;
        Vector y(ops.nx + ops.cdim());
        y.tail(ops.cdim()) = ec;
        for (int d = 0; d < opts.mc_draws; ++d) {
            y.head(ops.nx) = base + sampler.sample();
            const double eps_next =
                model.gamma * (quad_form(ops.W1, y) + ops.trace_bar);
            sum += eps_next;
            sumsq += eps_next * eps_next;
        }
        const double n = opts.mc_draws;
        const double mean = sum / n;
        const double se = std::sqrt(std::max(sumsq / n - mean * mean, 0.0) / n);
        const double z = std::abs(mean - rhs) / std::max(se, 1e-300);
        r.margin = 3.0 - z;
        r.pass = z <= 3.0;
        rep.suites.push_back(r);
    }

    {  // expected one-step decrease of the optimal cost
        PropertyResult r{"expected_cost_decrease", true, 0.0, 3.0, "margin is (bound-mean)/se"};
        auto frozen = detail::freeze_state(setup, 4, derive_seed(opts.seed, 103));
        const PredictionOperators& ops = frozen.controller.previous_ops();
        const Vector& cstar = frozen.controller.previous_c();
        const double bound = frozen.info.cost_optimal - frozen.info.stage_cost +
                             (model.Omega * ops.gain.P_hat).trace();
        DisturbanceSampler sampler(model.Omega, derive_seed(opts.seed, 104), setup.dist);
        const Vector base = ops.Phi * frozen.x + model.B * cstar.head(ops.nu);
        double sum = 0.0, sumsq = 0.0;
        for (int d = 0; d < opts.mc_draws; ++d) {
            Controller next = frozen.controller;
            const StepInfo info = next.step(base + sampler.sample());
            sum += info.cost_optimal;
            sumsq += info.cost_optimal * info.cost_optimal;
        }
        const double n = opts.mc_draws;
        const double mean = sum / n;
        const double se = std::sqrt(std::max(sumsq / n - mean * mean, 0.0) / n);
        const double z = (mean - bound) / std::max(se, 1e-300);
        r.margin = 3.0 - z;
        r.pass = z <= 3.0;
        rep.suites.push_back(r);
    }

    if (opts.closed_loop) {
        // time-average stage cost against tr(Omega P_hat(mu_0)), plus the
        // ensemble mean of the budget-recursion residual.
        PropertyResult ravg{"time_average_cost_bound", true, 0.0, 3.0, "margin is (bound-mean)/se"};
        PropertyResult reps{"epsilon_recursion", true, 0.0, 3.0, "margin is -mean/se"};
        const double bound = table->record(0).trace_hat;
        std::vector<double> run_means(opts.avg_runs);
        std::vector<double> resid_means(opts.avg_runs);
        std::atomic<int> next{0};
        std::atomic<bool> failed{false};
        auto worker = [&]() {
            for (int rr = next.fetch_add(1); rr < opts.avg_runs; rr = next.fetch_add(1)) {
                try {
                    Controller ctl = make_controller(setup);
                    DisturbanceSampler sampler(model.Omega,
                                               derive_seed(opts.seed, 200 + rr), setup.dist);
                    Vector x = setup.x0;
                    double cost = 0.0, resid = 0.0, prev_eps = 0.0, prev_cnorm = 0.0;
                    for (int k = 0; k < opts.avg_steps; ++k) {
                        const StepInfo info = ctl.step(x);
                        cost += info.stage_cost;
                        if (k >= 1)
                            resid += model.gamma * info.epsilon - prev_eps + prev_cnorm;
                        prev_eps = info.epsilon;
                        prev_cnorm = (model.C * x).squaredNorm();
                        x = model.A * x + model.B * info.u + sampler.sample();
                    }
                    run_means[rr] = cost / opts.avg_steps;
                    resid_means[rr] = resid / (opts.avg_steps - 1);
                } catch (...) {
                    failed = true;
                }
            }
        };
        int threads = opts.threads > 0
                          ? opts.threads
                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
        std::vector<std::thread> pool;
        for (int t = 1; t < std::min(threads, opts.avg_runs); ++t) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
        if (failed) {
            ravg.pass = false;
            ravg.detail = "closed-loop rollout failed";
            rep.suites.push_back(ravg);
        } else {
            const double n = opts.avg_runs;
            double mean = 0.0, rmean = 0.0;
            for (double v : run_means) mean += v;
            for (double v : resid_means) rmean += v;
            mean /= n;
            rmean /= n;
            double var = 0.0, rvar = 0.0;
            for (double v : run_means) var += (v - mean) * (v - mean);
            for (double v : resid_means) rvar += (v - rmean) * (v - rmean);
            const double se = std::sqrt(var / (n - 1.0) / n);
            const double rse = std::sqrt(rvar / (n - 1.0) / n);
            const double z = (mean - bound) / std::max(se, 1e-300);
            ravg.margin = 3.0 - z;
            ravg.pass = z <= 3.0;
            const double rz = rmean / std::max(rse, 1e-300);
            reps.margin = 3.0 - rz;
            reps.pass = rz <= 3.0;
            rep.suites.push_back(ravg);
            rep.suites.push_back(reps);
        }
    }

    return rep;
}

// Random controllable/observable instance for the property sweeps.
inline PlantModel random_model(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> nxd(2, 3), nud(1, 2), ncd(1, 2), nd_horizon(3, 6);
    std::uniform_real_distribution<double> gd(0.5, 0.95), rho_d(0.3, 0.95), sc(0.4, 1.6);
    std::normal_distribution<double> nd;
    for (int attempt = 0; attempt < 100; ++attempt) {
        PlantModel m;
        const int nx = nxd(rng), nu = nud(rng), nc = ncd(rng);
        m.A.resize(nx, nx);
        for (int i = 0; i < nx * nx; ++i) m.A(i / nx, i % nx) = nd(rng);
        const double rho = spectral_radius(m.A);
        if (rho > 0.0) m.A *= rho_d(rng) / rho;
        m.B.resize(nx, nu);
        for (int i = 0; i < nx * nu; ++i) m.B(i / nu, i % nu) = nd(rng);
        m.C.resize(nc, nx);
        for (int i = 0; i < nc * nx; ++i) m.C(i / nx, i % nx) = 0.5 * nd(rng);
        m.Q = sc(rng) * Matrix::Identity(nx, nx);
        m.R = sc(rng) * Matrix::Identity(nu, nu);
        Matrix g(nx, nx);
        for (int i = 0; i < nx * nx; ++i) g(i / nx, i % nx) = 0.3 * nd(rng);
        m.Omega = g * g.transpose() + 0.2 * Matrix::Identity(nx, nx);
        m.gamma = gd(rng);
        m.e = 1.5;
        m.N = nd_horizon(rng);
        if (validate_model(m).ok()) return m;
    }
    throw NumericalError("failed to draw a valid random model");
}

}  // namespace dsmpc
