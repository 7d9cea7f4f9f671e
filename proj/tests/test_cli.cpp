#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsmpc/run_config.hpp"
#include "benchmark_model.hpp"

namespace fs = std::filesystem;

namespace {

struct CliEnv {
    fs::path dir;
    CliEnv() {
        dir = fs::temp_directory_path() / ("dsmpc_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~CliEnv() { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    int run(const std::string& args, const std::string& tag,
            const std::string& env = "") const {
        const std::string cmd = env + " \"" DSMPC_CLI_PATH "\" " + args + " > " +
                                path(tag + ".out") + " 2> " + path(tag + ".err");
        return std::system(cmd.c_str());
    }

    std::string slurp(const std::string& name) const {
        std::ifstream in(path(name), std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    }

    void write(const std::string& name, const std::string& content) const {
        std::ofstream out(path(name), std::ios::binary);
        out << content;
    }
};

std::string benchmark_config(int grid = 65, int runs = 4, int T = 40,
                             const std::string& mode = "method1", double gamma = 0.9) {
    dsmpc::PlantModel m = coupled_tank_model();
    m.gamma = gamma;
    std::ostringstream os;
    os << "{\"model\":" << dsmpc::to_json_text(m) << ",\"mode\":\"" << mode << "\","
       << "\"grid\":{\"count\":" << grid << ",\"mu_min\":1e-15},"
       << "\"x0\":[-1,3],\"epsilon0\":1.5,\"T\":" << T << ",\"runs\":" << runs << ","
       << "\"violation_horizon\":150,\"seed\":7,"
       << "\"initial_gain\":{\"policy\":\"value\",\"mu\":1e-15},"
       << "\"distribution\":\"laplace\"}";
    return os.str();
}

}  // namespace

TEST_CASE("synth, montecarlo, simulate, feasible-set and determinism end to end") {
    CliEnv env;
    env.write("config.json", benchmark_config());

    REQUIRE(env.run("synth --config " + env.path("config.json") + " --out " +
                        env.path("lib.json"),
                    "synth") == 0);
    const auto libj = nlohmann::json::parse(env.slurp("lib.json"));
    CHECK(libj.at("records").size() == 65);
    CHECK(libj.at("format_version") == 1);

    REQUIRE(env.run("montecarlo --config " + env.path("config.json") + " --library " +
                        env.path("lib.json") + " --out " + env.path("m1.json"),
                    "mc1") == 0);
    REQUIRE(env.run("montecarlo --config " + env.path("config.json") + " --library " +
                        env.path("lib.json") + " --out " + env.path("m2.json"),
                    "mc2") == 0);
    const std::string m1 = env.slurp("m1.json");
    CHECK(m1 == env.slurp("m2.json"));  // byte-identical reruns
    const auto mj = nlohmann::json::parse(m1);
    CHECK(mj.at("runs") == 4);
    CHECK(mj.at("feasibility_failures") == 0);
    CHECK(mj.at("mode") == "method1");

    REQUIRE(env.run("simulate --config " + env.path("config.json") + " --library " +
                        env.path("lib.json") + " --out " + env.path("traj.csv"),
                    "sim") == 0);
    const std::string csv = env.slurp("traj.csv");
    CHECK(csv.find("k,x0,x1,u0,u1,eps,mu_bar,lambda,stage_cost,violation") !=
          std::string::npos);
    int lines = 0;
    for (char ch : csv)
        if (ch == '\n') ++lines;
    CHECK(lines == 2 + 40 + 1);

    REQUIRE(env.run("feasible-set --config " + env.path("config.json") +
                        " --mus 1e-15 1e-4 2.5e-4 --directions 8 --out " +
                        env.path("bound.csv"),
                    "feas") == 0);
    std::istringstream bs(env.slurp("bound.csv"));
    std::string line;
    std::getline(bs, line);  // comment
    std::getline(bs, line);  // header
    CHECK(line == "mu,d0,d1,radius");
    std::vector<double> radii;
    while (std::getline(bs, line)) {
        const auto pos = line.rfind(',');
        radii.push_back(std::stod(line.substr(pos + 1)));
    }
    REQUIRE(radii.size() == 24);
    for (int d = 0; d < 8; ++d) {
        CHECK(radii[8 + d] <= radii[d] + 1e-9);        // mu=1e-4 inside mu=1e-15
        CHECK(radii[16 + d] <= radii[8 + d] + 1e-9);   // mu=2.5e-4 inside mu=1e-4
    }
}

TEST_CASE("validation and staleness failures exit nonzero with JSON errors") {
    CliEnv env;
    env.write("config.json", benchmark_config());
    env.write("bad_runs.json", benchmark_config(65, 0, 40));
    REQUIRE(env.run("synth --config " + env.path("config.json") + " --out " +
                        env.path("lib.json"),
                    "synth") == 0);

    CHECK(env.run("montecarlo --config " + env.path("bad_runs.json") + " --library " +
                      env.path("lib.json") + " --out " + env.path("x.json"),
                  "badruns") != 0);
    CHECK(env.slurp("badruns.err").find("runs") != std::string::npos);

    env.write("other_model.json", benchmark_config(65, 4, 40, "method1", 0.85));
    CHECK(env.run("montecarlo --config " + env.path("other_model.json") + " --library " +
                      env.path("lib.json") + " --out " + env.path("x.json"),
                  "stale") != 0);
    CHECK(env.slurp("stale.err").find("stale") != std::string::npos);

    CHECK(env.run("no-such-command --config x", "unknown") != 0);
}

TEST_CASE("check-properties emits a report and respects the output directory override") {
    CliEnv env;
    env.write("config.json", benchmark_config(33, 2, 20, "fixed"));
    REQUIRE(env.run("synth --config " + env.path("config.json") + " --out " +
                        env.path("lib.json"),
                    "synth") == 0);
    REQUIRE(env.run("check-properties --config " + env.path("config.json") + " --library " +
                        env.path("lib.json") + " --out " + env.path("report.json") +
                        " --draws 4000",
                    "chk") == 0);
    const auto rep = nlohmann::json::parse(env.slurp("report.json"));
    CHECK(rep.contains("config_hash"));
    bool saw_budget_identity = false;
    for (const auto& s : rep.at("suites")) {
        CHECK(s.at("pass") == true);
        if (s.at("suite") == "budget_recursion_identity") saw_budget_identity = true;
    }
    CHECK(saw_budget_identity);

    const fs::path outdir = env.dir / "redirected";
    REQUIRE(env.run("montecarlo --config " + env.path("config.json") + " --library " +
                        env.path("lib.json") + " --out metrics.json",
                    "redir", "DSMPC_OUT_DIR=" + outdir.string()) == 0);
    CHECK(fs::exists(outdir / "metrics.json"));
}
