// Acceptance suite: one pass/fail line per criterion, measured values
// printed alongside every clause. Exits with the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <thread>

#include "dsmpc/run_config.hpp"
#include "dsmpc/sim_harness.hpp"
#include "oracles.hpp"
#include "benchmark_model.hpp"

using namespace dsmpc;
using Clock = std::chrono::steady_clock;

namespace {

int g_threads = 0;

struct Criterion {
    Criterion(int id, std::string name) : id(id), name(std::move(name)) {}
    int id;
    std::string name;
    bool pass = true;
    std::vector<std::string> lines;

    void clause(bool ok, const std::string& text) {
        pass = pass && ok;
        lines.push_back(std::string(ok ? "  ok   " : "  FAIL ") + text);
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void report(const Criterion& c, double seconds, int* failures) {
    if (!c.pass) ++*failures;
    std::printf("[%s] criterion %d: %s (%.1fs)\n", c.pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), seconds);
    for (const auto& l : c.lines) std::printf("%s\n", l.c_str());
    std::fflush(stdout);
}

SimSetup benchmark_setup(const PlantModel& m, std::shared_ptr<const OperatorTable> table,
                         GainMode mode) {
    SimSetup s;
    s.model = m;
    s.table = std::move(table);
    s.mode = mode;
    s.x0 = Vector(2);
    s.x0 << -1.0, 3.0;
    s.epsilon0 = 1.5;
    s.policy = InitialGainPolicy::Value;
    s.initial_mu = 1e-15;
    return s;
}

struct Paired {
    double mean = 0.0;
    double se = 0.0;
};

template <typename F>
Paired paired_difference(const std::vector<RunStats>& a, const std::vector<RunStats>& b, F f) {
    const size_t n = a.size();
    Paired p;
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = f(a[i]) - f(b[i]);
    for (double v : d) p.mean += v;
    p.mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : d) var += (v - p.mean) * (v - p.mean);
    p.se = std::sqrt(var / (n - 1.0) / n);
    return p;
}

}  // namespace

int main() {
    if (const char* t = std::getenv("DSMPC_THREADS")) g_threads = std::max(1, std::atoi(t));
    if (g_threads <= 0)
        g_threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    const PlantModel model = coupled_tank_model();
    int failures = 0;
    auto t_all = Clock::now();

    // shared offline products: full default grid
    auto t0 = Clock::now();
    const GainLibrary lib = generate_gain_library(model, default_mu_grid(2000, 1e-15));
    auto table = std::make_shared<const OperatorTable>(model, lib, g_threads);
    std::printf("offline: 2000-point gain library + operator table in %.1fs\n",
                std::chrono::duration<double>(Clock::now() - t0).count());

    {  // 1. gain-synthesis point check against the published benchmark gain
        auto t = Clock::now();
        Criterion c{1, "gain synthesis point check at mu = 1e-15"};
        const GainRecord& rec = lib.records[0];
        Matrix k0(2, 2);
        k0 << -18.0749, -0.4626, -0.9251, -17.6123;
        const double dist = (rec.L - k0).cwiseAbs().maxCoeff();
        c.clause(dist <= 1e-3, "entrywise |L - K0| = " + fmt(dist) + " (required <= 1e-3)");
        c.clause(std::abs(rec.trace_hat - 640.0) <= 0.5,
                 "tr(Omega P_hat) = " + fmt(rec.trace_hat) + " (required 640.0 +- 0.5)");
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    {  // 2. LQ cross-validation against an independent Riccati iteration
        auto t = Clock::now();
        Criterion c{2, "LQ gain cross-validation at mu = 1"};
        const Matrix k_lq = oracles::dare_gain(model.A, model.B, model.Q, model.R);
        const double dist = (lib.records.back().L - k_lq).norm();
        c.clause(dist <= 1e-6, "Frobenius gap to the Riccati fixed point = " + fmt(dist));
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    {  // 3. property suites on the benchmark and 100 random stable instances
        auto t = Clock::now();
        Criterion c{3, "property suites (100 random instances + benchmark)"};
        VerifyOptions opts;
        opts.mc_draws = 100000;
        opts.closed_loop = true;
        opts.threads = g_threads;
        const PropertyReport rep = verify_properties(model, lib, opts);
        for (const auto& s : rep.suites)
            c.clause(s.pass, "benchmark " + s.suite + " margin = " + fmt(s.margin));

        std::atomic<int> next{0};
        std::atomic<int> failed_instances{0};
        std::vector<std::string> failures_txt(100);
        auto worker = [&]() {
            for (int i = next.fetch_add(1); i < 100; i = next.fetch_add(1)) {
                std::mt19937_64 rng(derive_seed(777, i));
                try {
                    const PlantModel rm = random_model(rng);
                    const GainLibrary rlib =
                        generate_gain_library(rm, default_mu_grid(9, 1e-6));
                    VerifyOptions ro;
                    ro.seed = derive_seed(778, i);
                    ro.mc_draws = 100000;
                    ro.closed_loop = false;
                    ro.threads = 1;
                    const PropertyReport rrep = verify_properties(rm, rlib, ro);
                    for (const auto& s : rrep.suites)
                        if (!s.pass) {
                            failures_txt[i] = "instance " + std::to_string(i) + " " + s.suite +
                                              " margin = " + fmt(s.margin);
                            ++failed_instances;
                        }
                } catch (const std::exception& ex) {
                    failures_txt[i] = "instance " + std::to_string(i) + " threw: " + ex.what();
                    ++failed_instances;
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 1; w < g_threads; ++w) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
        for (const auto& s : failures_txt)
            if (!s.empty()) c.clause(false, s);
        c.clause(failed_instances == 0, "random instances passing: " +
                                            std::to_string(100 - failed_instances.load()) +
                                            "/100");
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    const uint64_t base_seed = 1;

    {  // 4. closed-loop campaign at 500 runs x 2000 steps per mode
        auto t = Clock::now();
        Criterion c{4, "closed-loop campaign (500 x 2000, horizon 150)"};
        std::vector<std::vector<RunStats>> runs;
        bool any_failure = false;
        std::string failure_txt;
        for (GainMode mode : {GainMode::Fixed, GainMode::Method1, GainMode::Method2}) {
            try {
                runs.push_back(monte_carlo_runs(benchmark_setup(model, table, mode), 500, 2000,
                                                150, base_seed, g_threads));
            } catch (const std::exception& ex) {
                any_failure = true;
                failure_txt = ex.what();
                runs.emplace_back();
            }
        }
        c.clause(!any_failure, any_failure ? "feasibility failure: " + failure_txt
                                           : "zero online infeasibilities in all runs and modes");
        if (!any_failure) {
            Metrics m[3];
            const char* names[3] = {"fixed", "method1", "method2"};
            for (int i = 0; i < 3; ++i)
                m[i] = metrics_from_runs(runs[i], 2000, 150, base_seed, table->size() - 1);
            for (int i = 0; i < 3; ++i)
                c.clause(m[i].P_violation <= 1.5,
                         std::string("P_violation(") + names[i] + ") = " +
                             fmt(m[i].P_violation) + " <= 1.5");
            c.clause(m[1].P_violation > m[0].P_violation,
                     "P_violation(method1) = " + fmt(m[1].P_violation) +
                         " > P_violation(fixed) = " + fmt(m[0].P_violation));
            c.clause(m[2].P_violation > m[0].P_violation,
                     "P_violation(method2) = " + fmt(m[2].P_violation) +
                         " > P_violation(fixed) = " + fmt(m[0].P_violation));
            c.clause(m[0].J_average >= 575.0 && m[0].J_average <= 705.0,
                     "J_average(fixed) = " + fmt(m[0].J_average) + " in [575, 705]");
            c.clause(m[1].J_average < m[2].J_average && m[2].J_average < m[0].J_average,
                     "J_average ordering method1 < method2 < fixed: " + fmt(m[1].J_average) +
                         " < " + fmt(m[2].J_average) + " < " + fmt(m[0].J_average));
        }
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    {  // 5. paired-seed short-horizon cost ordering (2000 runs x 40 steps)
        auto t = Clock::now();
        Criterion c{5, "paired short-horizon costs (2000 x 40)"};
        std::vector<std::vector<RunStats>> runs;
        for (GainMode mode : {GainMode::Fixed, GainMode::Method1, GainMode::Method2})
            runs.push_back(monte_carlo_runs(benchmark_setup(model, table, mode), 2000, 40, 150,
                                            base_seed, g_threads));
        auto jmean = [](const RunStats& r) { return r.stage_cost_sum / r.steps; };
        Metrics m[3];
        for (int i = 0; i < 3; ++i)
            m[i] = metrics_from_runs(runs[i], 40, 150, base_seed, table->size() - 1);
        const Paired m1_vs_m2 = paired_difference(runs[1], runs[2], jmean);
        const Paired fx_vs_m1 = paired_difference(runs[0], runs[1], jmean);
        c.clause(m1_vs_m2.mean > 3.0 * m1_vs_m2.se,
                 "J40(method2) < J40(method1): gap = " + fmt(m1_vs_m2.mean) + " (" +
                     fmt(m1_vs_m2.mean / m1_vs_m2.se) + " paired SEs)");
        c.clause(fx_vs_m1.mean > 3.0 * fx_vs_m1.se,
                 "J40(method1) < J40(fixed): gap = " + fmt(fx_vs_m1.mean) + " (" +
                     fmt(fx_vs_m1.mean / fx_vs_m1.se) + " paired SEs)");
        c.clause(m[0].J_average >= 807.2 * 0.85 && m[0].J_average <= 807.2 * 1.15,
                 "J40(fixed) = " + fmt(m[0].J_average) + " within 15% of 807.2");
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    {  // 6. feedback-gain convergence (200 runs x 200 steps)
        auto t = Clock::now();
        Criterion c{6, "gain convergence (200 x 200)"};
        const auto r1 = monte_carlo_runs(benchmark_setup(model, table, GainMode::Method1), 200,
                                         200, 150, base_seed, g_threads);
        const auto r2 = monte_carlo_runs(benchmark_setup(model, table, GainMode::Method2), 200,
                                         200, 150, base_seed, g_threads);
        const Metrics m1 = metrics_from_runs(r1, 200, 150, base_seed, table->size() - 1);
        const Metrics m2 = metrics_from_runs(r2, 200, 150, base_seed, table->size() - 1);
        c.clause(m1.mu_convergence >= 0.9,
                 "fraction of method1 runs with mu_200 = 1: " + fmt(m1.mu_convergence));
        c.clause(m2.mu_final_mean < m1.mu_final_mean,
                 "mean mu_200: method2 = " + fmt(m2.mu_final_mean) +
                     " strictly below method1 = " + fmt(m1.mu_final_mean));
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    {  // 7. nested feasible-set boundaries
        auto t = Clock::now();
        Criterion c{7, "nested feasible-set boundaries (64 directions)"};
        const auto dirs = unit_circle_directions(64);
        std::vector<std::vector<double>> radii;
        for (double mu : {1e-15, 1e-4, 2.5e-4}) {
            const GainRecord rec = dp_fixed_point(model, mu);
            const PredictionOperators ops = build_prediction_operators(model, rec);
            radii.push_back(feasible_set_boundary(ops, 1.5, dirs));
        }
        bool nested = true;
        double worst = 0.0;
        for (size_t lvl = 1; lvl < radii.size(); ++lvl)
            for (size_t i = 0; i < dirs.size(); ++i) {
                const double grow = radii[lvl][i] - radii[lvl - 1][i];
                if (std::isfinite(grow)) worst = std::max(worst, grow);
                if (grow > 1e-9) nested = false;
            }
        c.clause(nested, "radii non-increasing in mu along every direction (max growth = " +
                             fmt(worst) + ")");
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    {  // 8. byte-identical Monte Carlo metrics under a fixed config + seed
        auto t = Clock::now();
        Criterion c{8, "deterministic metrics emission"};
        auto run_once = [&]() {
            const GainLibrary l2 = generate_gain_library(model, default_mu_grid(129, 1e-15));
            auto tab = std::make_shared<const OperatorTable>(model, l2, g_threads);
            const Metrics m = monte_carlo(benchmark_setup(model, tab, GainMode::Method1), 8, 100,
                                          150, 5, g_threads, "method1", "acceptance");
            return to_json_text(m);
        };
        const std::string a = run_once();
        const std::string b = run_once();
        c.clause(a == b, "repeated campaign produced byte-identical metrics JSON (" +
                             std::to_string(a.size()) + " bytes)");
        report(c, std::chrono::duration<double>(Clock::now() - t).count(), &failures);
    }

    std::printf("acceptance finished in %.1fs: %d of 8 criteria failed\n",
                std::chrono::duration<double>(Clock::now() - t_all).count(), failures);
    return failures;
}
