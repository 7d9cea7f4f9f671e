#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "dsmpc/sim_harness.hpp"

namespace dsmpc {

// One experiment description: model, controller mode, grid law, initial
// condition and budgets, and the Monte Carlo shape. Everything an output
// file depends on is in here, so the config hash identifies the run.
struct RunConfig {
    PlantModel model;
    GainMode mode = GainMode::Fixed;
    int grid_count = 2000;
    double grid_mu_min = 1e-15;
    Vector x0;
    std::optional<double> epsilon0;
    int T = 100;
    int runs = 1;
    int violation_horizon = 150;
    uint64_t seed = 1;
    InitialGainPolicy policy = InitialGainPolicy::LargestFeasible;
    double initial_mu = 0.0;
    DisturbanceSampler::Dist dist = DisturbanceSampler::Dist::Laplace;

    std::vector<double> mu_grid() const { return default_mu_grid(grid_count, grid_mu_min); }
};

inline GainMode gain_mode_from_string(const std::string& s) {
    if (s == "fixed") return GainMode::Fixed;
    if (s == "method1") return GainMode::Method1;
    if (s == "method2") return GainMode::Method2;
    throw StructuralError("unknown mode '" + s + "' (expected fixed|method1|method2)");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    if (!j.contains("model")) throw StructuralError("config missing 'model'");
    cfg.model = model_from_json(j.at("model"));
    cfg.mode = gain_mode_from_string(j.value("mode", "fixed"));
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        cfg.grid_count = g.value("count", 2000);
        cfg.grid_mu_min = g.value("mu_min", 1e-15);
    }
    if (j.contains("x0")) {
        const Matrix m = matrix_from_json(j.at("x0"), "x0");
        cfg.x0 = m.col(0);
    } else {
        cfg.x0 = Vector::Zero(cfg.model.nx());
    }
    if (j.contains("epsilon0")) cfg.epsilon0 = j.at("epsilon0").get<double>();
    cfg.T = j.value("T", 100);
    cfg.runs = j.value("runs", 1);
    cfg.violation_horizon = j.value("violation_horizon", 150);
    cfg.seed = j.value("seed", 1ull);
    if (j.contains("initial_gain")) {
        const auto& ig = j.at("initial_gain");
        const std::string p = ig.value("policy", "largest");
        if (p == "largest")
            cfg.policy = InitialGainPolicy::LargestFeasible;
        else if (p == "smallest")
            cfg.policy = InitialGainPolicy::SmallestFeasible;
        else if (p == "value")
            cfg.policy = InitialGainPolicy::Value;
        else
            throw StructuralError("unknown initial_gain.policy '" + p + "'");
        cfg.initial_mu = ig.value("mu", 0.0);
        if (cfg.policy == InitialGainPolicy::Value && !(cfg.initial_mu > 0.0))
            throw StructuralError("initial_gain.policy 'value' needs a positive mu");
    }
    const std::string d = j.value("distribution", "laplace");
    if (d == "laplace")
        cfg.dist = DisturbanceSampler::Dist::Laplace;
    else if (d == "gaussian")
        cfg.dist = DisturbanceSampler::Dist::Gaussian;
    else
        throw StructuralError("unknown distribution '" + d + "'");

    // validate before any computation
    require_valid(cfg.model);
    if (cfg.x0.size() != cfg.model.nx()) throw StructuralError("x0 has wrong length");
    if (cfg.T < 1) throw StructuralError("T must be >= 1");
    if (cfg.runs < 1) throw StructuralError("runs must be >= 1");
    if (cfg.violation_horizon < 0) throw StructuralError("violation_horizon must be >= 0");
    if (cfg.grid_count < 1) throw StructuralError("grid.count must be >= 1");
    if (!(cfg.grid_mu_min > 0.0 && cfg.grid_mu_min <= 1.0))
        throw StructuralError("grid.mu_min must lie in (0,1]");
    if (cfg.epsilon0 && !(*cfg.epsilon0 >= 0.0))
        throw StructuralError("epsilon0 must be nonnegative");
    return cfg;
}

inline std::string to_json_text(const RunConfig& cfg) {
    JsonWriter w;
    w.begin_object();
    w.key("model").begin_object();
    write_model_fields(w, cfg.model);
    w.end_object();
    w.field("mode", to_string(cfg.mode));
    w.key("grid").begin_object();
    w.field("count", cfg.grid_count);
    w.field("mu_min", cfg.grid_mu_min);
    w.end_object();
    w.key("x0").vector(cfg.x0);
    if (cfg.epsilon0) w.field("epsilon0", *cfg.epsilon0);
    w.field("T", cfg.T);
    w.field("runs", cfg.runs);
    w.field("violation_horizon", cfg.violation_horizon);
    w.field("seed", cfg.seed);
    w.key("initial_gain").begin_object();
    w.field("policy", cfg.policy == InitialGainPolicy::LargestFeasible    ? "largest"
                      : cfg.policy == InitialGainPolicy::SmallestFeasible ? "smallest"
                                                                          : "value");
    w.field("mu", cfg.initial_mu);
    w.end_object();
    w.field("distribution",
            cfg.dist == DisturbanceSampler::Dist::Laplace ? "laplace" : "gaussian");
    w.end_object();
    return w.str();
}

inline std::string config_hash(const RunConfig& cfg) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json_text(cfg))));
    return buf;
}

inline SimSetup setup_from_config(const RunConfig& cfg,
                                  std::shared_ptr<const OperatorTable> table) {
    SimSetup s;
    s.model = cfg.model;
    s.table = std::move(table);
    s.mode = cfg.mode;
    s.x0 = cfg.x0;
    s.epsilon0 = cfg.epsilon0;
    s.policy = cfg.policy;
    s.initial_mu = cfg.initial_mu;
    s.dist = cfg.dist;
    return s;
}

}  // namespace dsmpc
