#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kagent/agent.hpp"
#include "kagent/executor.hpp"
#include "kagent/llm.hpp"

namespace kagent::cli {

/// Exit codes. Failing kernels are results, not faults, and still exit 0.
enum ExitCode : int {
    kOk = 0,
    kFault = 1,
    kUsage = 2,
    kRunIncomplete = 3,
};

enum class ExecutorKind { Mock, Subprocess };

struct ExecutorSettings {
    ExecutorKind kind = ExecutorKind::Mock;
    std::vector<std::string> command;
    std::chrono::milliseconds timeout{60'000};
    std::size_t workers = 1;
};

/// Run configuration document. Relative paths resolve against the file.
struct EngineConfig {
    BackendConfig backend;
    AgentConfig agent;
    TimingConfig timing;
    ExecutorSettings executor;
    std::optional<std::filesystem::path> knowledge_path;
};

/// Throws ParseError; semantic problems are returned by validate_config.
EngineConfig load_config(const std::filesystem::path& path);
std::vector<std::string> validate_config(const EngineConfig& config);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kagent::cli
