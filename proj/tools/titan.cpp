// titan: command-line front end.
//
//   titan <command> [--config FILE | --manifest FILE] [--dry-run] [--quiet] [--KEY VALUE ...]
//
// Any config key may be overridden as --key value or --key=value. The result
// summary is printed to stdout as JSON; progress goes to stderr.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "titan/app.hpp"
#include "titan/config.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (!a.starts_with("--") || a.size() == 2) throw titan::ConfigError("unexpected argument '" + a + "'");
        const std::string body = a.substr(2);
        if (const auto eq = body.find('='); eq != std::string::npos) {
            out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
        } else if (i + 1 < args.size()) {
            out.emplace_back(body, args[++i]);
        } else {
            throw titan::ConfigError("option '" + a + "' needs a value");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Source-free domain adaptive detection on synthetic data"};
    app.require_subcommand(0, 1);
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "Print every config key with its default and exit");

    std::string config_file, manifest_file;
    bool dry_run = false, quiet = false;
    std::vector<CLI::App*> subs;
    const char* help[] = {"Write the four dataset splits", "Train the detector on labeled source data",
                          "Partition the target and adapt the source model", "Split target images by detection variance",
                          "Evaluate a checkpoint group on one split", "Covering-number bounds of trained discriminators"};
    for (std::size_t i = 0; i < titan::command_names().size(); ++i) {
        CLI::App* sub = app.add_subcommand(titan::command_names()[i], help[i]);
        sub->add_option("--config", config_file, "Flat JSON config");
        sub->add_option("--manifest", manifest_file, "Replay the config recorded in a manifest");
        sub->add_flag("--dry-run", dry_run, "Validate and print the resolved config; write nothing");
        sub->add_flag("--quiet", quiet, "No progress output");
        sub->allow_extras();
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? titan::kExitOk : titan::kExitInput;
    }

    if (list_keys) {
        std::cout << titan::config_to_json(titan::RunConfig{}).dump(2) << "\n";
        return titan::kExitOk;
    }
    CLI::App* chosen = nullptr;
    for (CLI::App* s : subs) {
        if (s->parsed()) chosen = s;
    }
    if (chosen == nullptr) {
        std::cerr << app.help();
        return titan::kExitInput;
    }

    const std::string command = chosen->get_name();
    return titan::guarded_exit(
        [&] {
            titan::ConfigSources src;
            src.config_file = config_file;
            src.manifest_file = manifest_file;
            src.env_seed = std::getenv("TITAN_SEED");
            src.overrides = parse_overrides(chosen->remaining());
            const titan::RunConfig cfg = titan::resolve_config(src);
            if (dry_run) {
                std::cout << titan::dry_run_report(command, cfg).dump(2) << "\n";
                return;
            }
            titan::LogFn log;
            if (!quiet) log = [](const std::string& line) { std::cerr << line << std::endl; };
            std::cout << titan::run_command(command, cfg, log).dump(2) << "\n";
        },
        std::cerr);
}
