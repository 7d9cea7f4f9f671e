#pragma once

#include <memory>
#include <optional>
#include <utility>

#include "dsmpc/gain_selection.hpp"

namespace dsmpc {

enum class GainMode { Fixed, Method1, Method2 };

inline const char* to_string(GainMode m) {
    switch (m) {
        case GainMode::Fixed: return "fixed";
        case GainMode::Method1: return "method1";
        case GainMode::Method2: return "method2";
    }
    return "?";
}

struct StepInfo {
    int k = 0;
    double epsilon = 0.0;
    double mu_bar = 0.0;
    int mu_index = 0;
    double lambda = 0.0;
    double stage_cost = 0.0;
    bool violation = false;       // |C x_k| >= 1
    double cost_optimal = 0.0;    // J*(x_k, K_k)
    double constraint_value = 0.0;
    bool selection_capped = false;
    Vector u;
};

// The online state machine: at each step it derives the constraint budget
// from the previous optimal solution, selects a feedback gain (in the
// dynamic modes), solves the QCQP and applies u = K x + c*_0. The budget
// update deliberately runs against the *previous* gain; selection happens
// strictly after it.
class Controller {
  public:
    // Dynamic gain selection from a precomputed operator table.
    Controller(const PlantModel& model, std::shared_ptr<const OperatorTable> table, GainMode mode,
               const Vector& x0, std::optional<double> epsilon0 = {},
               InitialGainPolicy policy = InitialGainPolicy::LargestFeasible,
               double initial_mu_value = 0.0)
        : model_(model), table_(std::move(table)), mode_(mode) {
        require_valid(model_);
        if (mode_ == GainMode::Fixed && !table_)
            throw StructuralError("fixed mode needs a gain record or a table entry");
        eps0_ = epsilon0.value_or(model_.e);
        eps0_overridden_ = epsilon0.has_value() && *epsilon0 != model_.e;
        const SelectionOutcome sel = initial_gain(*table_, x0, eps0_, policy, initial_mu_value);
        index_ = sel.mu_index;
        ops_ = table_->ops(index_);
        check_initial_feasibility(x0);
    }

    // Fixed feedback gain; certificates are computed here if the record
    // carries none (both Lyapunov solves run once at init).
    Controller(const PlantModel& model, const GainRecord& fixed_gain, const Vector& x0,
               std::optional<double> epsilon0 = {})
        : model_(model), mode_(GainMode::Fixed) {
        require_valid(model_);
        eps0_ = epsilon0.value_or(model_.e);
        eps0_overridden_ = epsilon0.has_value() && *epsilon0 != model_.e;
        GainRecord rec = fixed_gain;
        if (rec.P_bar.size() == 0 || rec.P_hat.size() == 0)
            rec = gain_record_from_feedback(model_, fixed_gain.L, fixed_gain.mu);
        ops_ = std::make_shared<const PredictionOperators>(
            build_prediction_operators(model_, rec));
        check_initial_feasibility(x0);
    }

    // Budget for the current step from the previous optimal solution: the
    // shifted tail under the previous gain plus that gain's covariance term.
    double update_epsilon(const Vector& x_k) const {
        if (k_ == 0) throw StructuralError("update_epsilon needs k >= 1");
        Vector y(prev_ops_->nx + prev_ops_->cdim());
        y.head(prev_ops_->nx) = x_k;
        y.tail(prev_ops_->cdim()) = shifted_tail(prev_c_, prev_ops_->nu);
        return quad_form(prev_ops_->W1, y) + prev_ops_->trace_bar;
    }

    StepInfo step(const Vector& x_k) {
        StepInfo info;
        info.k = k_;
        if (k_ == 0) {
            info.epsilon = eps0_;
        } else {
            info.epsilon = update_epsilon(x_k);
            if (mode_ == GainMode::Method1) {
                const SelectionOutcome sel =
                    select_method1(*table_, index_, *ops_, x_k, info.epsilon);
                info.selection_capped = sel.capped;
                index_ = sel.mu_index;
                ops_ = table_->ops(index_);
            } else if (mode_ == GainMode::Method2) {
                const SelectionOutcome sel = select_method2(*table_, index_, x_k, info.epsilon);
                index_ = sel.mu_index;
                ops_ = table_->ops(index_);
            }
        }

        QcqpSolution sol;
        try {
            sol = solve_mpc(*ops_, x_k, info.epsilon);
        } catch (const InfeasibleError& ex) {
            if (k_ == 0) throw;
            // Guaranteed impossible after a feasible start; a failure here
            // means internal state is inconsistent, so fail loudly.
            throw std::logic_error(std::string("recursive feasibility violated at k=") +
                                   std::to_string(k_) + ": " + ex.what());
        }

        info.mu_bar = ops_->gain.mu;
        info.mu_index = index_;
        info.lambda = sol.multiplier;
        info.cost_optimal = sol.objective;
        info.constraint_value = sol.constraint_value;
        info.u = ops_->gain.L * x_k + sol.c_star.head(ops_->nu);
        info.stage_cost = x_k.dot(model_.Q * x_k) + info.u.dot(model_.R * info.u);
        info.violation = (model_.C * x_k).norm() >= 1.0;

        prev_c_ = sol.c_star;
        prev_ops_ = ops_;
        eps_ = info.epsilon;
        ++k_;
        return info;
    }

    static Vector shifted_tail(const Vector& c, int nu) {
        Vector out = Vector::Zero(c.size());
        if (c.size() > nu) out.head(c.size() - nu) = c.tail(c.size() - nu);
        return out;
    }

    int time() const { return k_; }
    double epsilon() const { return eps_; }
    int mu_index() const { return index_; }
    GainMode mode() const { return mode_; }
    bool epsilon0_overridden() const { return eps0_overridden_; }
    const PredictionOperators& current_ops() const { return *ops_; }
    const PredictionOperators& previous_ops() const { return *prev_ops_; }
    const Vector& previous_c() const { return prev_c_; }
    const PlantModel& model() const { return model_; }

  private:
    void check_initial_feasibility(const Vector& x0) {
        const double v = constraint_min_value(*ops_, x0);
        if (v > eps0_ + 1e-9 * (1.0 + std::abs(eps0_))) {
            std::ostringstream os;
            os << "initially infeasible: attainable constraint minimum " << v
               << " exceeds epsilon0 = " << eps0_ << " (gap " << v - eps0_ << ", mu="
               << ops_->gain.mu << ")";
            throw InfeasibleError(os.str(), v - eps0_);
        }
    }

    PlantModel model_;
    std::shared_ptr<const OperatorTable> table_;
    GainMode mode_ = GainMode::Fixed;
    double eps0_ = 0.0;
    bool eps0_overridden_ = false;

    int k_ = 0;
    double eps_ = 0.0;
    int index_ = 0;
    std::shared_ptr<const PredictionOperators> ops_;
    std::shared_ptr<const PredictionOperators> prev_ops_;
    Vector prev_c_;
};

// Expanded form of the budget update in terms of the realised disturbance;
// equals update_epsilon once x_k = xbar*_1 + omega. Kept as a cross-check.
inline double epsilon_via_disturbance(const PlantModel& m, const PredictionOperators& prev_ops,
                                      const Vector& x_prev, const Vector& c_star_prev,
                                      const Vector& omega) {
    const Vector stacked = prev_ops.Mx * x_prev + prev_ops.Mc * c_star_prev;
    const int nx = prev_ops.nx;
    double sum = 0.0, comp = 0.0;
    auto add = [&](double term) {
        const double t = sum + term;
        if (std::abs(sum) >= std::abs(term))
            comp += (sum - t) + term;
        else
            comp += (term - t) + sum;
        sum = t;
    };
    Matrix phi_pow = Matrix::Identity(nx, nx);
    double g = 1.0;
    for (int i = 0; i < m.N; ++i) {
        const Vector xi = stacked.segment(i * nx, nx) + phi_pow * omega;
        add(g * (m.C * xi).squaredNorm());
        phi_pow = prev_ops.Phi * phi_pow;
        g *= m.gamma;
    }
    const Vector xN1 = prev_ops.Phi * stacked.segment((m.N - 1) * nx, nx) + phi_pow * omega;
    add(g * xN1.dot(prev_ops.gain.P_bar * xN1));
    add(prev_ops.trace_bar);
    return sum + comp;
}

}  // namespace dsmpc
