#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hypctl/cli.hpp"
#include "hypctl/config_io.hpp"

using namespace hypctl;
using Catch::Matchers::ContainsSubstring;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() /
               ("hypctl_test_" + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("configuration round-trips bit-exactly through serialization", "[config-cli]") {
    RunConfig cfg;
    cfg.horizon = 0.1 + 0.2;  // not representable as a short decimal
    cfg.cfl = 2.0 / 3.0;
    cfg.tol = 3.141592653589793e-11;
    cfg.lambdas = {0.1 + 0.2, 1.0 / 3.0, 7.0};
    cfg.seed = 0xdeadbeefcafeULL;

    json j1 = run_config_to_json(cfg);
    RunConfig cfg2 = parse_run_config(j1);
    json j2 = run_config_to_json(cfg2);
    REQUIRE(j1.dump() == j2.dump());
    REQUIRE(cfg2.horizon == cfg.horizon);
    REQUIRE(cfg2.cfl == cfg.cfl);
    REQUIRE(cfg2.tol == cfg.tol);
    REQUIRE(cfg2.lambdas == cfg.lambdas);
    REQUIRE(cfg2.seed == cfg.seed);

    TempDir dir("roundtrip");
    save_run_config(cfg, dir.file("config.json"));
    RunConfig cfg3 = load_run_config(dir.file("config.json"));
    REQUIRE(run_config_to_json(cfg3).dump() == j1.dump());
}

TEST_CASE("unknown keys are rejected with their location", "[config-cli]") {
    REQUIRE_THROWS_WITH(parse_run_config(json::parse(R"({"grid": {"cellz": 16}})")),
                        ContainsSubstring("cellz") && ContainsSubstring("grid"));
    REQUIRE_THROWS_WITH(
        parse_run_config(json::parse(R"({"control": {"target": {"knd": "zero"}}})")),
        ContainsSubstring("knd") && ContainsSubstring("control.target"));
    REQUIRE_THROWS_WITH(parse_run_config(json::parse(R"({"grd": {}})")),
                        ContainsSubstring("grd") && ContainsSubstring("top level"));
    REQUIRE_THROWS_AS(parse_run_config(json::parse(R"({"system": {"flavour": "x"}})")),
                      ConfigError);
}

TEST_CASE("out-of-range values are rejected as configuration errors", "[config-cli]") {
    auto reject = [](const char* text) {
        REQUIRE_THROWS_AS(parse_run_config(json::parse(text)), ConfigError);
    };
    reject(R"({"tree": {"depth": 0}})");
    reject(R"({"tree": {"depth": 25}})");
    reject(R"({"tree": {"horizon": -1.0}})");
    reject(R"({"grid": {"cfl": 1.5}})");
    reject(R"({"grid": {"cfl": 0.0}})");
    reject(R"({"grid": {"cells": 0}})");
    reject(R"({"control": {"tol": -1.0}})");
    reject(R"({"control": {"max_iter": 0}})");
    reject(R"({"initial": {"kind": "ramp"}})");
    reject(R"({"control": {"target": {"kind": "chaos"}}})");
    reject(R"({"carleman": {"lambdas": []}})");
    reject(R"({"carleman": {"probes": 0}})");
    reject(R"({"rays": {"dt": 0.0}})");
    reject(R"({"system": {"label": "no-such-system"}})");
    reject(R"({"system": {"label": "sir-age", "custom": {"A": []}}})");
    reject(R"({"output_dir": ""})");
}

TEST_CASE("custom systems parse polynomial coefficients and echo canonically", "[config-cli]") {
    const json j = json::parse(R"({
        "system": {"custom": {
            "label": "drift-x",
            "state_dim": 1,
            "space_dim": 1,
            "domain": {"lower": [0.0], "upper": [1.0]},
            "degree": 1,
            "A": [[[[0.0, 1.0]]]],
            "B1": [[0.25]]
        }},
        "grid": {"cells": [8, 8]}
    })");
    RunConfig cfg = parse_run_config(j);
    REQUIRE(cfg.system_label == "drift-x");
    REQUIRE(cfg.spec.state_dim == 1);
    REQUIRE(cfg.custom_system.has_value());

    // Coefficient array [0, 1] over the degree-1 basis is the identity map x.
    const std::array<double, 1> x{0.4};
    REQUIRE(cfg.spec.A[0].eval(std::span<const double>(x)).coeff(0, 0) ==
            Catch::Approx(0.4).margin(1e-15));
    const std::array<double, 2> xt{0.3, 0.9};
    REQUIRE(cfg.spec.B1.eval(std::span<const double>(xt)).coeff(0, 0) == 0.25);

    json echo = run_config_to_json(cfg);
    REQUIRE(echo["system"]["custom"] == j["system"]["custom"]);
    RunConfig cfg2 = parse_run_config(echo);
    REQUIRE(run_config_to_json(cfg2).dump() == echo.dump());

    // Wrong coefficient count for the declared degree is caught with a count.
    json bad = j;
    bad["system"]["custom"]["A"][0][0][0] = {0.0, 1.0, 2.0};
    REQUIRE_THROWS_WITH(parse_run_config(bad), ContainsSubstring("expected"));
}

TEST_CASE("certification workflow runs end to end through the CLI", "[config-cli]") {
    TempDir dir("cond");
    REQUIRE(cli::run({"check-condition", "--system", "sir-age", "--out", dir.str()}) == 0);

    std::vector<std::string> csv = lines_of(read_file(dir.file("condition.csv")));
    REQUIRE(csv.size() == 2);
    REQUIRE_THAT(csv[0], ContainsSubstring("alpha1"));
    REQUIRE(csv[1] == "1,0,1,-1,0,1");

    json manifest = json::parse(read_file(dir.file("manifest.json")));
    REQUIRE(manifest.at("version").get<std::string>() == std::string(kVersion));
    REQUIRE_THAT(manifest.at("command").get<std::string>(), ContainsSubstring("check-condition"));
    REQUIRE(manifest.at("config").at("system").at("label") == "sir-age");
    const auto outputs = manifest.at("outputs").get<std::vector<std::string>>();
    REQUIRE_THAT(outputs, Catch::Matchers::Contains(std::string("condition.csv")));
}

TEST_CASE("invalid invocations exit with the configuration code", "[config-cli]") {
    TempDir dir("invalid");
    REQUIRE(cli::run({"simulate", "--bogus-flag"}) == 2);
    REQUIRE(cli::run({}) == 2);
    REQUIRE(cli::run({"validate", "--system", "no-such-system", "--out", dir.str()}) == 2);
    REQUIRE(cli::run({"validate", "--config", dir.file("missing.json"), "--out", dir.str()}) == 2);
    REQUIRE(cli::run({"--version"}) == 0);
}

TEST_CASE("structural failures exit with the invariant code", "[config-cli]") {
    TempDir dir("skew");
    {
        std::ofstream out(dir.file("skew.json"));
        out << R"({"system": {"custom": {
            "label": "skew",
            "state_dim": 2,
            "space_dim": 1,
            "A": [[[0.0, 1.0], [-1.0, 0.0]]]
        }}})";
    }
    REQUIRE(cli::run({"validate", "--config", dir.file("skew.json"), "--out", dir.str()}) == 3);
}

TEST_CASE("control outputs are byte-identical across reruns", "[config-cli]") {
    TempDir a("ctrl_a");
    TempDir b("ctrl_b");
    const std::vector<std::string> base = {"control",  "--system", "scalar-transport",
                                           "--cells",  "8",        "--depth",
                                           "3",        "--T",      "1.5"};
    auto with_out = [&](const TempDir& d) {
        std::vector<std::string> args = base;
        args.push_back("--out");
        args.push_back(d.str());
        return args;
    };
    REQUIRE(cli::run(with_out(a)) == 0);
    REQUIRE(cli::run(with_out(b)) == 0);

    for (const char* name :
         {"control_u.csv", "control_v.csv", "terminal.csv", "control_report.json"}) {
        const std::string ca = read_file(a.file(name));
        REQUIRE(!ca.empty());
        REQUIRE(ca == read_file(b.file(name)));
    }
    json report = json::parse(read_file(a.file("control_report.json")));
    REQUIRE(report.at("converged").get<bool>());
    REQUIRE(report.at("residual").get<double>() <= 1e-8);
}
