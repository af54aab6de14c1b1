#pragma once

// Subcommands behind the CLI and the Python module. Each command writes its
// artifacts plus exactly one manifest.json into cfg.out_dir and returns a
// summary. Manifests record the resolved config, so replaying one through
// resolve_config reproduces every numeric output byte for byte.

#include <functional>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "titan/config.hpp"
#include "titan/synth.hpp"

namespace titan {

enum ExitCode : int {
    kExitOk = 0,
    kExitInternal = 1,
    kExitInput = 2,
    kExitNumeric = 3,
};

const std::vector<std::string>& command_names();

/// Progress lines for humans; never part of any output file.
using LogFn = std::function<void(const std::string&)>;

/// A named split, loaded from its file when one is configured, else generated.
Dataset obtain_dataset(const RunConfig& cfg, const std::string& split);

nlohmann::ordered_json cmd_generate(const RunConfig& cfg, const LogFn& log = {});
nlohmann::ordered_json cmd_pretrain(const RunConfig& cfg, const LogFn& log = {});
nlohmann::ordered_json cmd_adapt(const RunConfig& cfg, const LogFn& log = {});
nlohmann::ordered_json cmd_partition(const RunConfig& cfg, const LogFn& log = {});
nlohmann::ordered_json cmd_eval(const RunConfig& cfg, const LogFn& log = {});
nlohmann::ordered_json cmd_bound(const RunConfig& cfg, const LogFn& log = {});

/// Dispatch by name. Throws ConfigError on an unknown command.
nlohmann::ordered_json run_command(const std::string& command, const RunConfig& cfg, const LogFn& log = {});

/// What --dry-run prints: the command and its fully resolved config.
nlohmann::ordered_json dry_run_report(const std::string& command, const RunConfig& cfg);

/// Runs body and maps its exceptions onto exit codes, reporting them on err.
int guarded_exit(const std::function<void()>& body, std::ostream& err);

}  // namespace titan
