// Command-line front end: offline gain synthesis, single closed-loop
// simulations, Monte Carlo campaigns, numerical property verification and
// feasible-set boundary emission. Configuration is one JSON document per
// run; outputs embed the config hash and seeds so they can be regenerated
// bit-identically.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dsmpc/run_config.hpp"

namespace fs = std::filesystem;
using namespace dsmpc;

namespace {

int env_threads() {
    if (const char* t = std::getenv("DSMPC_THREADS")) return std::max(1, std::atoi(t));
    return 0;  // library default: hardware concurrency
}

// DSMPC_OUT_DIR redirects all outputs into one directory, keeping basenames.
fs::path resolve_out(const std::string& path) {
    if (const char* dir = std::getenv("DSMPC_OUT_DIR")) {
        fs::create_directories(dir);
        return fs::path(dir) / fs::path(path).filename();
    }
    return fs::path(path);
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StructuralError("cannot open output file " + path.string());
    out << content;
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StructuralError("cannot read " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

RunConfig load_config(const std::string& path) {
    return run_config_from_json(load_json(path));
}

GainLibrary load_library(const std::string& path, const PlantModel& model) {
    return library_from_json(load_json(path), model_hash(model));
}

std::shared_ptr<const OperatorTable> build_table(const RunConfig& cfg, const GainLibrary& lib) {
    return std::make_shared<const OperatorTable>(cfg.model, lib, env_threads());
}

int cmd_synth(const std::string& config_path, const std::string& out_path) {
    const RunConfig cfg = load_config(config_path);
    const GainLibrary lib = generate_gain_library(cfg.model, cfg.mu_grid());
    for (const auto& wmsg : lib.warnings) std::cerr << "warning: " << wmsg << "\n";
    write_file(resolve_out(out_path), to_json_text(lib) + "\n");
    std::cout << "wrote " << resolve_out(out_path).string() << " (" << lib.size()
              << " records)\n";
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& lib_path,
                 const std::string& out_path, int run_index) {
    const RunConfig cfg = load_config(config_path);
    const GainLibrary lib = load_library(lib_path, cfg.model);
    const SimSetup setup = setup_from_config(cfg, build_table(cfg, lib));
    Trajectory traj = run_closed_loop(setup, cfg.T, derive_seed(cfg.seed, run_index),
                                      cfg.violation_horizon);
    traj.config_hash = config_hash(cfg);
    write_file(resolve_out(out_path), trajectory_to_csv(traj, cfg.model));
    std::cout << "wrote " << resolve_out(out_path).string() << " (" << traj.steps.size()
              << " steps, final mu=" << fmt_double(traj.final_mu) << ")\n";
    return 0;
}

int cmd_montecarlo(const std::string& config_path, const std::string& lib_path,
                   const std::string& out_path) {
    const RunConfig cfg = load_config(config_path);
    const GainLibrary lib = load_library(lib_path, cfg.model);
    const SimSetup setup = setup_from_config(cfg, build_table(cfg, lib));
    const Metrics metrics =
        monte_carlo(setup, cfg.runs, cfg.T, cfg.violation_horizon, cfg.seed, env_threads(),
                    to_string(cfg.mode), config_hash(cfg));
    write_file(resolve_out(out_path), to_json_text(metrics) + "\n");
    std::cout << "wrote " << resolve_out(out_path).string()
              << " (J_average=" << fmt_double(metrics.J_average)
              << ", P_violation=" << fmt_double(metrics.P_violation) << ")\n";
    return 0;
}

int cmd_check_properties(const std::string& config_path, const std::string& lib_path,
                         const std::string& out_path, int draws) {
    const RunConfig cfg = load_config(config_path);
    const GainLibrary lib = load_library(lib_path, cfg.model);
    VerifyOptions opts;
    opts.seed = cfg.seed;
    opts.mc_draws = draws;
    opts.mode = cfg.mode;
    opts.threads = env_threads();
    const PropertyReport rep = verify_properties(cfg.model, lib, opts);
    JsonWriter w;
    w.begin_object();
    w.field("config_hash", config_hash(cfg));
    w.field("seed", cfg.seed);
    w.end_object();
    std::string head = w.str();
    head.pop_back();  // splice the suites into the same object
    write_file(resolve_out(out_path), head + "," + to_json_text(rep).substr(1) + "\n");
    int failures = 0;
    for (const auto& s : rep.suites) {
        std::cout << (s.pass ? "pass " : "FAIL ") << s.suite << " margin="
                  << fmt_double(s.margin) << "\n";
        if (!s.pass) ++failures;
    }
    return failures == 0 ? 0 : 3;
}

int cmd_feasible_set(const std::string& config_path, const std::vector<double>& mus,
                     int directions, const std::string& out_path) {
    const RunConfig cfg = load_config(config_path);
    if (cfg.model.nx() != 2)
        throw StructuralError("feasible-set boundary emission expects a 2-state model");
    const double eps0 = cfg.epsilon0.value_or(cfg.model.e);
    const auto dirs = unit_circle_directions(directions);
    std::ostringstream os;
    os << "# config_hash=" << config_hash(cfg) << "\n";
    os << "mu,d0,d1,radius\n";
    for (double mu : mus) {
        const GainRecord rec = dp_fixed_point(cfg.model, mu);
        const PredictionOperators ops = build_prediction_operators(cfg.model, rec);
        const auto radii = feasible_set_boundary(ops, eps0, dirs);
        for (size_t i = 0; i < dirs.size(); ++i) {
            auto num = [](double v) {
                return std::isinf(v) ? std::string("inf") : fmt_double(v);
            };
            os << fmt_double(mu) << "," << fmt_double(dirs[i](0)) << ","
               << fmt_double(dirs[i](1)) << "," << num(radii[i]) << "\n";
        }
    }
    write_file(resolve_out(out_path), os.str());
    std::cout << "wrote " << resolve_out(out_path).string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discounted-chance-constraint stochastic MPC toolkit"};
    app.require_subcommand(1);

    std::string config_path, lib_path, out_path;
    int run_index = 0;
    int draws = 100000;
    int directions = 64;
    std::vector<double> mus;

    auto* synth = app.add_subcommand("synth", "synthesise a gain library");
    synth->add_option("--config", config_path)->required();
    synth->add_option("--out", out_path)->required();

    auto* sim = app.add_subcommand("simulate", "run one closed-loop trajectory to CSV");
    sim->add_option("--config", config_path)->required();
    sim->add_option("--library", lib_path)->required();
    sim->add_option("--out", out_path)->required();
    sim->add_option("--run-index", run_index, "per-run seed index (replays Monte Carlo runs)");

    auto* mc = app.add_subcommand("montecarlo", "Monte Carlo campaign to metrics JSON");
    mc->add_option("--config", config_path)->required();
    mc->add_option("--library", lib_path)->required();
    mc->add_option("--out", out_path)->required();

    auto* chk = app.add_subcommand("check-properties", "numerical property suites to JSON");
    chk->add_option("--config", config_path)->required();
    chk->add_option("--library", lib_path)->required();
    chk->add_option("--out", out_path)->required();
    chk->add_option("--draws", draws, "Monte Carlo draws per identity");

    auto* feas = app.add_subcommand("feasible-set", "boundary radii per direction to CSV");
    feas->add_option("--config", config_path)->required();
    feas->add_option("--mus", mus, "mu values")->required();
    feas->add_option("--directions", directions, "number of unit directions");
    feas->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_path);
        if (sim->parsed()) return cmd_simulate(config_path, lib_path, out_path, run_index);
        if (mc->parsed()) return cmd_montecarlo(config_path, lib_path, out_path);
        if (chk->parsed()) return cmd_check_properties(config_path, lib_path, out_path, draws);
        if (feas->parsed()) return cmd_feasible_set(config_path, mus, directions, out_path);
    } catch (const std::exception& ex) {
        JsonWriter w;
        w.begin_object();
        w.field("error", std::string(ex.what()));
        w.end_object();
        std::cerr << w.str() << "\n";
        return 1;
    }
    return 0;
}
