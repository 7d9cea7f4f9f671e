#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "dsmpc/qcqp.hpp"

namespace dsmpc {

// Per-record prediction operators for a whole gain library, built once and
// shared read-only across controllers and worker threads. Selection only
// needs the monotone trace column and the per-record Schur forms S_c / S_J,
// all of which live inside the operator records.
class OperatorTable {
  public:
    OperatorTable(const PlantModel& model, const GainLibrary& lib, int threads = 0) {
        if (lib.records.empty()) throw StructuralError("gain library is empty");
        const std::string expect = model_hash(model);
        if (!lib.model_hash.empty() && lib.model_hash != expect)
            throw StructuralError("gain library was built for a different model (hash " +
                                  lib.model_hash + " != " + expect + ")");
        const int m = lib.size();
        ops_.resize(m);
        if (threads <= 0)
            threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
        threads = std::min(threads, m);
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        std::mutex err_mutex;
        std::string first_error;
        auto worker = [&]() {
            for (int i = next.fetch_add(1); i < m; i = next.fetch_add(1)) {
                try {
                    ops_[i] = std::make_shared<const PredictionOperators>(
                        build_prediction_operators(model, lib.records[i]));
                } catch (const std::exception& ex) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (first_error.empty())
                        first_error = "operator build failed at mu=" +
                                      std::to_string(lib.records[i].mu) + ": " + ex.what();
                }
            }
        };
        for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
        if (!first_error.empty()) throw NumericalError(first_error);
        trace_bar_.resize(m);
        trace_bar_sel_.resize(m);
        mu_.resize(m);
        for (int i = 0; i < m; ++i) {
            trace_bar_[i] = lib.records[i].trace_bar;
            // running max: the column is monotone up to solver jitter, and an
            // exactly monotone copy keeps the binary search well-posed
            trace_bar_sel_[i] =
                i == 0 ? trace_bar_[i] : std::max(trace_bar_[i], trace_bar_sel_[i - 1]);
            mu_[i] = lib.records[i].mu;
        }
    }

    int size() const { return static_cast<int>(ops_.size()); }
    double mu(int i) const { return mu_[i]; }
    double trace_bar(int i) const { return trace_bar_[i]; }
    double trace_bar_sel(int i) const { return trace_bar_sel_[i]; }
    const std::shared_ptr<const PredictionOperators>& ops(int i) const { return ops_[i]; }
    const GainRecord& record(int i) const { return ops_[i]->gain; }

    // min_c of the constraint form at record i, trace term included.
    double min_constraint(int i, const Vector& x) const {
        return x.dot(ops_[i]->S_c * x) + trace_bar_[i];
    }
    double cost_at_constraint_min(int i, const Vector& x) const {
        return x.dot(ops_[i]->S_J * x);
    }

  private:
    std::vector<std::shared_ptr<const PredictionOperators>> ops_;
    std::vector<double> trace_bar_;
    std::vector<double> trace_bar_sel_;
    std::vector<double> mu_;
};

struct SelectionOutcome {
    int mu_index = 0;
    double mu = 0.0;
    double slack = 0.0;  // budget left at the selected record
    int probes = 0;      // table lookups spent
    bool capped = false; // feasibility safeguard reduced the raw choice
};

namespace detail {

// Largest index in [lo, size) whose minimised constraint value fits the
// budget. Monotone in the index, so a binary search applies; the caller
// guarantees feasibility at lo, which the search never abandons.
inline int largest_feasible_index(const OperatorTable& table, const Vector& x, double eps,
                                  int lo, int* probes) {
    int a = lo, b = table.size() - 1;
    while (a < b) {
        const int mid = a + (b - a + 1) / 2;
        ++*probes;
        if (table.min_constraint(mid, x) <= eps)
            a = mid;
        else
            b = mid - 1;
    }
    return a;
}

}  // namespace detail

// Method 1: minimise the constraint form under the previous gain, then pick
// the largest mu whose covariance trace still fits the freed budget (a binary
// search over the offline trace column). A final check drops back to the
// largest index at which the new-gain problem itself is feasible, so the
// online optimisation is never handed an infeasible budget.
inline SelectionOutcome select_method1(const OperatorTable& table, int prev_index,
                                       const PredictionOperators& prev_ops, const Vector& x,
                                       double epsilon) {
    const double quad = x.dot(prev_ops.S_c * x);  // [x;c^o]' W1(K_prev) [x;c^o]
    SelectionOutcome out;

    int a = prev_index, b = table.size() - 1;
    while (a < b) {
        const int mid = a + (b - a + 1) / 2;
        ++out.probes;
        if (quad + table.trace_bar_sel(mid) <= epsilon)
            a = mid;
        else
            b = mid - 1;
    }

    ++out.probes;
    if (a > prev_index &&
        table.min_constraint(a, x) > epsilon + 1e-9 * (1.0 + std::abs(epsilon))) {
        a = detail::largest_feasible_index(table, x, epsilon, prev_index, &out.probes);
        out.capped = true;
    }
    out.mu_index = a;
    out.mu = table.mu(a);
    out.slack = epsilon - (quad + table.trace_bar(a));
    return out;
}

// Method 2: cap the search at the largest mu whose own minimised constraint
// fits the budget, then scan that window for the record whose cost form at
// the constraint minimiser is smallest, preferring the largest mu on ties.
inline SelectionOutcome select_method2(const OperatorTable& table, int prev_index,
                                       const Vector& x, double epsilon) {
    SelectionOutcome out;
    const int cap = detail::largest_feasible_index(table, x, epsilon, prev_index, &out.probes);

    int best = prev_index;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int i = prev_index; i <= cap; ++i) {
        ++out.probes;
        const double cost = table.cost_at_constraint_min(i, x);
        if (cost <= best_cost) {  // "<=" keeps the largest tied mu
            best_cost = cost;
            best = i;
        }
    }
    out.mu_index = best;
    out.mu = table.mu(best);
    out.slack = epsilon - table.min_constraint(best, x);
    return out;
}

enum class InitialGainPolicy { LargestFeasible, SmallestFeasible, Value };

// Picks the initial record by membership of x0 in the feasible initial set
// of each record. Feasibility is monotone in the index (the sets are
// nested), so the feasible indices form a prefix of the grid.
inline SelectionOutcome initial_gain(const OperatorTable& table, const Vector& x0,
                                     double epsilon0,
                                     InitialGainPolicy policy = InitialGainPolicy::LargestFeasible,
                                     double mu_value = 0.0) {
    const double tol = 1e-9 * (1.0 + std::abs(epsilon0));
    SelectionOutcome out;
    ++out.probes;
    const double v0 = table.min_constraint(0, x0);
    if (v0 > epsilon0 + tol) {
        std::ostringstream os;
        os << "no grid mu admits x0: most permissive record (mu=" << table.mu(0)
           << ") needs " << v0 << " > epsilon0 = " << epsilon0;
        throw InfeasibleError(os.str(), v0 - epsilon0);
    }
    int idx = 0;
    switch (policy) {
        case InitialGainPolicy::SmallestFeasible:
            idx = 0;
            break;
        case InitialGainPolicy::LargestFeasible:
            idx = detail::largest_feasible_index(table, x0, epsilon0, 0, &out.probes);
            break;
        case InitialGainPolicy::Value: {
            // closest grid point by value, lower preferred on ties
            idx = 0;
            double best = std::abs(table.mu(0) - mu_value);
            for (int i = 1; i < table.size(); ++i) {
                const double d = std::abs(table.mu(i) - mu_value);
                if (d < best) {
                    best = d;
                    idx = i;
                }
            }
            ++out.probes;
            const double v = table.min_constraint(idx, x0);
            if (v > epsilon0 + tol) {
                std::ostringstream os;
                os << "requested initial mu=" << table.mu(idx) << " is infeasible at x0 by "
                   << v - epsilon0 << "; most permissive mu tried: " << table.mu(0);
                throw InfeasibleError(os.str(), v - epsilon0);
            }
            break;
        }
    }
    out.mu_index = idx;
    out.mu = table.mu(idx);
    out.slack = epsilon0 - table.min_constraint(idx, x0);
    return out;
}

// Radius of the feasible initial set along each unit direction:
// r^2 d' S_c d + trace_bar = epsilon0. A vanishing form along d gives an
// infinite radius (encoded as +inf); trace_bar beyond the budget gives an
// empty set (all radii zero).
inline std::vector<double> feasible_set_boundary(const PredictionOperators& ops,
                                                 double epsilon0,
                                                 const std::vector<Vector>& directions) {
    std::vector<double> radii;
    radii.reserve(directions.size());
    const double rem = epsilon0 - ops.trace_bar;
    for (const Vector& d : directions) {
        if (d.size() != ops.nx) throw StructuralError("direction has wrong length");
        if (rem <= 0.0) {
            radii.push_back(0.0);
            continue;
        }
        const double q = d.dot(ops.S_c * d);
        if (q <= 1e-14 * std::max(1.0, ops.S_c.norm()))
            radii.push_back(std::numeric_limits<double>::infinity());
        else
            radii.push_back(std::sqrt(rem / q));
    }
    return radii;
}

inline std::vector<Vector> unit_circle_directions(int count) {
    std::vector<Vector> dirs;
    dirs.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double th = 2.0 * M_PI * i / count;
        Vector d(2);
        d << std::cos(th), std::sin(th);
        dirs.push_back(std::move(d));
    }
    return dirs;
}

}  // namespace dsmpc
