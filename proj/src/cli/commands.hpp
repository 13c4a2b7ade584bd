#pragma once

#include <optional>
#include <string>

namespace atoms {

// Command bodies shared by the binary and the test suites. Each validates its
// configuration fully before any compute, writes its outputs plus a
// manifest.json into out_dir, and throws on failure (the binary maps
// exception types onto exit codes). The return value is the process exit
// code for non-throwing completions.
int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<uint64_t> seed_override);

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<uint64_t> seed_override);

int cmd_analyze(const std::string& subcommand, const std::string& config_path,
                const std::string& out_dir, std::optional<uint64_t> seed_override);

// Exit-code mapping used by the binary: 0 success, 2 configuration/contract,
// 3 runtime/numeric, 4 I/O or file format.
int exit_code_for_current_exception();

}  // namespace atoms
