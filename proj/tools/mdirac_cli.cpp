#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mdirac/experiments.hpp"

namespace fs = std::filesystem;
using namespace mdirac;

namespace {

void setup_logging() {
    auto log = spdlog::stderr_color_mt("mdirac");
    spdlog::set_default_logger(log);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("MDIRAC_LOG");
    const std::string lvl = env ? env : "error";
    if (lvl == "debug")
        spdlog::set_level(spdlog::level::debug);
    else if (lvl == "info")
        spdlog::set_level(spdlog::level::info);
    else
        spdlog::set_level(spdlog::level::err);
}

int cmd_list(bool as_json) {
    if (as_json) {
        json a = json::array();
        for (const auto& e : registry()) a.push_back({{"name", e.name}, {"description", e.description}});
        std::cout << a.dump(2) << "\n";
    } else {
        for (const auto& e : registry()) std::cout << e.name << "  " << e.description << "\n";
    }
    return 0;
}

int cmd_run(const std::string& path, std::optional<std::string> out_flag, std::optional<std::uint64_t> seed_flag) {
    RunContext rc;
    const Experiment* ex = nullptr;
    try {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config " + path);
        json cfg;
        try {
            cfg = json::parse(f);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("malformed JSON: ") + e.what());
        }
        Section top(cfg, "config", {"experiment", "params", "numerics", "output_dir", "seed"});
        if (!cfg.contains("experiment") || !cfg["experiment"].is_string())
            throw ConfigError("config.experiment must name a registered experiment");
        ex = find_experiment(cfg["experiment"].get<std::string>());
        if (!ex) throw ConfigError("unknown experiment '" + cfg["experiment"].get<std::string>() + "'");
        if (cfg.contains("params")) rc.params = cfg["params"];
        if (cfg.contains("numerics")) rc.numerics = cfg["numerics"];
        rc.seed = static_cast<std::uint64_t>(top.integer("seed", 1, 0));
        if (seed_flag) rc.seed = *seed_flag;
        std::string out = "out/" + ex->name;
        if (cfg.contains("output_dir")) {
            if (!cfg["output_dir"].is_string()) throw ConfigError("config.output_dir must be a string");
            out = cfg["output_dir"].get<std::string>();
        }
        if (out_flag) out = *out_flag;
        rc.out_dir = out;
        fs::create_directories(rc.out_dir);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    spdlog::info("running {} (seed {}) into {}", ex->name, rc.seed, rc.out_dir.string());
    Outcome oc;
    try {
        oc = ex->run(rc);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        oc.pass = false;
        oc.report["error"] = e.what();
        spdlog::error("{} failed: {}", ex->name, e.what());
    }
    json report = {{"experiment", ex->name}, {"seed", rc.seed}, {"pass", oc.pass}};
    for (const auto& [k, v] : oc.report.items()) report[k] = v;
    report["files"] = oc.files;
    write_text(rc.out_dir / "report.json", report.dump(2) + "\n");
    if (oc.report.contains("checks"))
        for (const auto& [k, v] : oc.report["checks"].items())
            spdlog::debug("check {}: {}", k, v.dump());
    spdlog::info("{}: {}", ex->name, oc.pass ? "pass" : "FAIL");
    return oc.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Dirac brackets on momentum levels and normal forms"};
    app.require_subcommand(0, 1);
    std::string config;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    bool as_json = false;
    auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
    run->add_option("config", config, "config file")->required();
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--seed", seed, "probe sampling seed");
    auto* list = app.add_subcommand("list", "list registered experiments");
    list->add_flag("--json", as_json, "machine-readable output");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (*run) return cmd_run(config, out_dir, seed);
    if (*list) return cmd_list(as_json);
    std::cerr << app.help();
    return 2;
}
