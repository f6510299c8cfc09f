// gflab: run, validate and list gradient-flow experiments.
#include <iostream>

#include <CLI11.hpp>

#include "gfl/cli.hpp"

namespace cli = gfl::cli;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;

int do_run(const std::string& path, const cli::RunOptions& ro) {
    cli::RunOutcome out;
    try {
        out = cli::run_experiment(cli::load_config(path), ro);
    } catch (const cli::ConfigError& e) {
        std::cerr << path << ": " << e.what() << '\n';
        return kExitConfig;
    }
    for (const auto& a : out.manifest["assertions"])
        std::cout << (a["passed"].get<bool>() ? "PASS " : "FAIL ") << a["name"].get<std::string>() << ' '
                  << a["detail"].dump() << '\n';
    if (!out.error.empty()) std::cerr << "experiment failed: " << out.error << '\n';
    std::cout << "status " << out.manifest["status"].get<std::string>() << ", manifest "
              << (out.dir / "manifest.json").string() << '\n';
    return out.exit_code;
}

int do_validate(const std::string& path) {
    std::vector<std::string> diags;
    try {
        diags = cli::validate_config(cli::load_config(path));
    } catch (const cli::ConfigError& e) {
        diags = {e.what()};
    }
    if (diags.empty()) {
        std::cout << path << ": ok\n";
        return kExitPass;
    }
    for (const auto& d : diags) std::cerr << path << ": " << d << '\n';
    return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-flow learnability experiments"};
    app.set_version_flag("--version", std::string(cli::kVersion));
    app.require_subcommand(1);

    std::string config;
    cli::RunOptions ro;
    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config, "experiment config (JSON)")->required();
    run->add_option("-o,--out", ro.out,
                    std::string("output directory (default: config output_dir, else $") + cli::kOutputRootEnv +
                        "/<experiment>-<seed>, else runs/<experiment>-<seed>)");
    run->add_flag("--force", ro.force, "replace an earlier run in the output directory");
    run->add_option("-j,--threads", ro.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    run->add_flag("--no-svg", ro.no_svg, "skip SVG plots");

    auto* val = app.add_subcommand("validate", "check a config without integrating");
    val->add_option("config", config, "experiment config (JSON)")->required();

    auto* list = app.add_subcommand("list-experiments", "print the experiment names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return do_run(config, ro);
        if (*val) return do_validate(config);
        if (*list) {
            for (const auto& e : cli::experiments()) std::cout << e.name << "\t" << e.description << '\n';
            return kExitPass;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFail;
    }
    return kExitPass;
}
