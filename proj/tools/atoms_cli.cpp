// Command-line front end: data generation, training runs and analyses, all
// driven by flat key = value config files. Every output directory receives a
// manifest sufficient to reproduce the command.

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"sparse dictionary adapters for attention fine-tuning"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    uint64_t seed_value = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value lines)")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_value, "override the config seed")
            ->each([&seed_set](const std::string&) { seed_set = true; });
    };

    CLI::App* gen = app.add_subcommand("gen-data", "write synthetic datasets");
    add_common(gen);

    CLI::App* run = app.add_subcommand("run", "execute a training protocol");
    add_common(run);

    CLI::App* analyze = app.add_subcommand("analyze", "post-hoc analyses");
    std::string analyze_kind;
    analyze->add_option("subcommand", analyze_kind,
                        "cost | influence | select-atoms | duel | expansion-verify | sweep")
        ->required();
    add_common(analyze);

    CLI11_PARSE(app, argc, argv);

    std::optional<uint64_t> seed_override;
    if (seed_set) seed_override = seed_value;

    try {
        if (gen->parsed()) return atoms::cmd_gen_data(config_path, out_dir, seed_override);
        if (run->parsed()) return atoms::cmd_run(config_path, out_dir, seed_override);
        if (analyze->parsed())
            return atoms::cmd_analyze(analyze_kind, config_path, out_dir, seed_override);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return atoms::exit_code_for_current_exception();
    }
    return 0;
}
