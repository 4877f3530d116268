#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kagent/memory.hpp"

namespace kagent {

struct KernelTask;
struct CorpusEntry;

enum class BackendKind { Mock, OpenAICompatible };

struct BackendConfig {
    BackendKind kind = BackendKind::Mock;
    /// Full chat-completions URL, e.g. https://host/v1/chat/completions.
    std::string endpoint_url;
    std::string model_name = "mock";
    /// 1.0 gives the sampling diversity parallel replicas rely on.
    double temperature = 1.0;
    int max_output_tokens = 4096;
    std::chrono::milliseconds request_timeout{120'000};
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in config files or logs.
    std::string api_key_env;
    int max_retries = 2;
    std::chrono::milliseconds retry_backoff{500};
    /// Mock only: transcript document to replay.
    std::string transcript_path;

    /// Human-readable identity used in error messages and run manifests.
    std::string identity() const;
};

/// Empty when the config is usable; otherwise one message per problem.
std::vector<std::string> validate_backend_config(const BackendConfig& config);
BackendConfig backend_config_from_json(const nlohmann::json& node);
nlohmann::json to_json(const BackendConfig& config);

enum class SegmentKind {
    Instruction,
    KnowledgeBlock,
    OneShotExemplar,
    ErrorTrace,
    PriorCode,
    PerfHistory,
    StrategyDirective,
};

const char* to_string(SegmentKind kind);

struct PromptSegment {
    SegmentKind kind;
    std::string text;

    bool operator==(const PromptSegment&) const = default;
};

struct PromptBundle {
    std::string system_text;
    std::vector<PromptSegment> segments;

    std::size_t count(SegmentKind kind) const;
    /// User message: each segment under a heading, in order.
    std::string render_user_message() const;
    /// Stable 64-bit FNV-1a digest, as 16 hex digits.
    std::string fingerprint() const;

    bool operator==(const PromptBundle&) const = default;
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct LLMResponse {
    std::string raw_text;
    std::optional<std::string> extracted_code;
    TokenUsage usage;
    std::chrono::milliseconds latency{0};
};

/// Operator-supplied text (hardware notes, kernel-writing guidance).
struct KnowledgeBlock {
    std::string text;
};

KnowledgeBlock load_knowledge(const std::filesystem::path& path);

inline constexpr std::size_t kDefaultReflectionWindow = 3;

// Prompt assembly. All of these are pure functions of their inputs.

/// Segments are [knowledge?, exemplar?, instruction]. With neither optional
/// part this is plain direct prompting.
PromptBundle assemble_generation_prompt(const KernelTask& task,
                                        const std::optional<CorpusEntry>& exemplar,
                                        const std::optional<KnowledgeBlock>& knowledge);

/// `earlier_rounds` are failures before the current one, oldest first. The
/// newest `window` (code, trace) pairs are included, current one last.
/// Throws EmptyTrace when `error_trace` is empty.
PromptBundle assemble_reflection_prompt(const KernelTask& task, const std::string& failed_code,
                                        const std::string& error_trace,
                                        std::span<const ReflectionRound> earlier_rounds,
                                        std::size_t window = kDefaultReflectionWindow);

/// Same, reading earlier rounds from `memory.reflections`.
PromptBundle assemble_reflection_prompt(const KernelTask& task, const std::string& failed_code,
                                        const std::string& error_trace, const AgentMemory& memory,
                                        std::size_t window = kDefaultReflectionWindow);

/// Lists the history as (code, speedup) pairs in ascending speedup order.
/// Throws EmptyHistory, or IncorrectEntry when any entry failed a test.
PromptBundle assemble_optimization_prompt(const KernelTask& task, const PerfHistory& history,
                                          const std::optional<KnowledgeBlock>& knowledge = {});

/// Interior of the last well-formed fenced code block, if any.
std::optional<std::string> extract_code_block(std::string_view raw_text);

/// Chat-completion request body for `bundle`: a system and a user message.
nlohmann::json build_chat_request(const PromptBundle& bundle, const BackendConfig& config);

/// Receives request/response bodies when tracing is enabled. Credentials are
/// never passed to it.
using TraceSink = std::function<void(std::string_view)>;

/// Chat model backend. Implementations must be callable from several worker
/// threads at once.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    /// Throws TransportError, AuthError or TimeoutError.
    virtual LLMResponse complete(const PromptBundle& bundle, const BackendConfig& config) = 0;
    virtual std::string identity() const = 0;
};

/// Replays a fixed list of responses in order. An exhausted script raises
/// TransportError without retrying.
class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> transcript, std::string name = "mock");

    LLMResponse complete(const PromptBundle& bundle, const BackendConfig& config) override;
    std::string identity() const override { return name_; }

    /// Serialized request bodies seen so far.
    std::vector<nlohmann::json> requests() const;
    std::size_t remaining() const;

private:
    std::string name_;
    std::vector<std::string> transcript_;
    mutable std::mutex mutex_;
    std::size_t next_ = 0;
    std::vector<nlohmann::json> requests_;
};

/// OpenAI-style chat-completions over HTTP(S). The API key is read from the
/// environment variable named by BackendConfig::api_key_env on every call.
class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(TraceSink trace = {});

    LLMResponse complete(const PromptBundle& bundle, const BackendConfig& config) override;
    std::string identity() const override { return "http"; }

private:
    TraceSink trace_;
};

/// Mock transcript document. Either a JSON array of response strings (every
/// replica replays the same script) or {"replicas": [[...], ...]} with one
/// script per replica.
struct Transcript {
    std::vector<std::vector<std::string>> scripts;

    const std::vector<std::string>& for_replica(std::size_t replica) const;
};

Transcript load_transcript(const std::filesystem::path& path);

}  // namespace kagent
