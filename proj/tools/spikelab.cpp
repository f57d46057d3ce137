#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spikelab/spikelab.hpp"

namespace {

enum Exit { kOk = 0, kConfigInvalid = 2, kSolverFailure = 3, kCheckFailed = 4 };

using namespace spikelab;

cli::Scenario resolve(const std::string& target) {
    if (auto s = cli::find_builtin(target)) return *s;
    if (std::filesystem::exists(target)) return cli::load_scenario(target);
    throw ConfigError("'" + target + "' is neither a built-in scenario nor a readable config file");
}

// Applies section.key=value overrides on top of the scenario document.
cli::Scenario with_overrides(const cli::Scenario& s, const std::vector<std::string>& sets) {
    cli::Document d = cli::to_document(s);
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || kv.find('.') > eq)
            throw ConfigError("override '" + kv + "' is not of the form section.key=value");
        d.put(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cli::scenario_from_document(d);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spike equilibria, stability and drift in the labor/capital model"};
    app.set_version_flag("--version", std::string(cli::kVersion));
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run a built-in scenario or a config file");
    std::string target, out_dir;
    bool check = false;
    int workers = 0;
    std::vector<std::string> sets;
    run->add_option("scenario", target, "Scenario name or path to an INI config")->required();
    run->add_option("-o,--output", out_dir, "Output directory (overrides [output] dir)");
    run->add_flag("--check", check, "Evaluate the scenario's [check] criteria; exit 4 on failure");
    run->add_option("-j,--workers", workers, "Worker threads for sweep points")->check(CLI::PositiveNumber);
    run->add_option("--set", sets, "Override a parameter, e.g. --set model.tau=2.5");

    auto* list = app.add_subcommand("list", "List built-in scenarios with their default parameters");
    bool verbose = false;
    list->add_flag("-v,--verbose", verbose, "Print the full parameter document of each entry");

    auto* validate = app.add_subcommand("validate", "Validate a config file without running it");
    std::string config_path;
    validate->add_option("config", config_path, "Path to an INI config")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            for (const auto& s : cli::builtin_scenarios()) {
                std::cout << s.name << "  (" << cli::to_string(s.kind) << ")\n";
                if (verbose) std::cout << cli::serialize(s) << '\n';
            }
            return kOk;
        }
        if (validate->parsed()) {
            const auto s = cli::load_scenario(config_path);
            cli::validate(s);
            std::cout << "ok: " << s.name << " (" << cli::to_string(s.kind) << ")\n";
            return kOk;
        }
        cli::Scenario s = resolve(target);
        if (!sets.empty()) s = with_overrides(s, sets);
        cli::validate(s);
        cli::RunOptions ro;
        ro.output_dir = out_dir;
        ro.check = check;
        ro.workers = workers;
        const auto outcome = cli::run_scenario(s, ro);
        for (const auto& c : outcome.manifest["checks"])
            std::cout << (c["passed"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>()
                      << ": " << c["detail"].get<std::string>() << '\n';
        std::cout << "artifacts: " << outcome.manifest["artifacts"].size() << ", wall time "
                  << outcome.manifest["wall_time_seconds"].get<double>() << " s\n";
        if (check && !outcome.checks_passed) return kCheckFailed;
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigInvalid;
    } catch (const ParameterDomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigInvalid;
    } catch (const std::exception& e) {
        std::cerr << "solver failure: " << e.what() << '\n';
        return kSolverFailure;
    }
}
