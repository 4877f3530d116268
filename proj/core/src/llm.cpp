#include "kagent/llm.hpp"

#include <algorithm>
#include <cstdlib>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "kagent/errors.hpp"
#include "kagent/retrieval.hpp"
#include "kagent/task.hpp"

namespace kagent {

using nlohmann::json;

namespace {

constexpr std::string_view kGeneratorSystem =
    "You are an expert GPU kernel engineer. You write correct, fast Triton kernels "
    "together with the Python wrapper that launches them. Reply with a short plan "
    "followed by the complete kernel source in one fenced code block.";

constexpr std::string_view kReflectorSystem =
    "You are an expert GPU kernel engineer debugging a Triton kernel that failed its "
    "functionality test. Reply with your diagnosis followed by the complete corrected "
    "kernel source in one fenced code block.";

constexpr std::string_view kOptimizerSystem =
    "You are an expert GPU kernel performance engineer. You are given functionally "
    "correct Triton kernels with their measured speedups over a reference "
    "implementation. Reply with an optimization strategy followed by the complete "
    "revised kernel source in one fenced code block.";

constexpr std::string_view kReflectDirective =
    "Analyze the cause of failure and propose a solution. Then provide the complete "
    "corrected kernel.";

constexpr std::string_view kOptimizeDirective =
    "The candidates above are sorted in ascending order of performance; the last one "
    "is the fastest so far. Propose an optimization strategy that improves latency and "
    "computational efficiency, then provide the complete revised kernel.";

const char* heading(SegmentKind kind) {
    switch (kind) {
        case SegmentKind::Instruction: return "Task";
        case SegmentKind::KnowledgeBlock: return "Domain knowledge";
        case SegmentKind::OneShotExemplar: return "Example of a similar kernel";
        case SegmentKind::ErrorTrace: return "Error trace";
        case SegmentKind::PriorCode: return "Failed attempt";
        case SegmentKind::PerfHistory: return "Previous correct candidate";
        case SegmentKind::StrategyDirective: return "What to do";
    }
    return "Segment";
}

std::string fenced(std::string_view code) {
    std::string out = "```python\n";
    out += code;
    if (!code.empty() && code.back() != '\n') {
        out += '\n';
    }
    out += "```";
    return out;
}

std::string instruction_text(const KernelTask& task) {
    return fmt::format("{}\n\nThe module must define a callable named `{}`.", task.instruction,
                       task.entry_point_or_id());
}

std::string speedup_label(double speedup) { return fmt::format("{:.4f}", speedup); }

}  // namespace

std::string BackendConfig::identity() const {
    if (kind == BackendKind::Mock) {
        return "mock:" + (transcript_path.empty() ? std::string("inline") : transcript_path);
    }
    return "http:" + model_name + "@" + endpoint_url;
}

std::vector<std::string> validate_backend_config(const BackendConfig& config) {
    std::vector<std::string> problems;
    if (!(config.temperature >= 0.0)) {
        problems.push_back("backend.temperature must be >= 0");
    }
    if (config.max_output_tokens <= 0) {
        problems.push_back("backend.max_output_tokens must be positive");
    }
    if (config.request_timeout.count() <= 0) {
        problems.push_back("backend.request_timeout_ms must be positive");
    }
    if (config.max_retries < 0) {
        problems.push_back("backend.max_retries must be >= 0");
    }
    if (config.kind == BackendKind::OpenAICompatible) {
        if (config.endpoint_url.empty()) {
            problems.push_back("backend.endpoint_url is required for the http backend");
        }
        if (config.model_name.empty()) {
            problems.push_back("backend.model is required for the http backend");
        }
    }
    return problems;
}

BackendConfig backend_config_from_json(const json& node) {
    BackendConfig config;
    try {
        const auto kind = node.value("kind", std::string("mock"));
        if (kind == "mock") {
            config.kind = BackendKind::Mock;
        } else if (kind == "http" || kind == "openai") {
            config.kind = BackendKind::OpenAICompatible;
        } else {
            throw ParseError("backend.kind must be 'mock' or 'http', got '" + kind + "'");
        }
        config.endpoint_url = node.value("endpoint_url", config.endpoint_url);
        config.model_name = node.value("model", config.model_name);
        config.temperature = node.value("temperature", config.temperature);
        config.max_output_tokens = node.value("max_output_tokens", config.max_output_tokens);
        config.request_timeout =
            std::chrono::milliseconds(node.value("request_timeout_ms", config.request_timeout.count()));
        config.api_key_env = node.value("api_key_env", config.api_key_env);
        config.max_retries = node.value("max_retries", config.max_retries);
        config.retry_backoff =
            std::chrono::milliseconds(node.value("retry_backoff_ms", config.retry_backoff.count()));
        config.transcript_path = node.value("transcript", config.transcript_path);
    } catch (const json::exception& e) {
        throw ParseError(std::string("backend config: ") + e.what());
    }
    return config;
}

json to_json(const BackendConfig& config) {
    return {{"kind", config.kind == BackendKind::Mock ? "mock" : "http"},
            {"endpoint_url", config.endpoint_url},
            {"model", config.model_name},
            {"temperature", config.temperature},
            {"max_output_tokens", config.max_output_tokens},
            {"request_timeout_ms", config.request_timeout.count()},
            {"api_key_env", config.api_key_env},
            {"max_retries", config.max_retries},
            {"retry_backoff_ms", config.retry_backoff.count()},
            {"transcript", config.transcript_path}};
}

const char* to_string(SegmentKind kind) {
    switch (kind) {
        case SegmentKind::Instruction: return "instruction";
        case SegmentKind::KnowledgeBlock: return "knowledge_block";
        case SegmentKind::OneShotExemplar: return "one_shot_exemplar";
        case SegmentKind::ErrorTrace: return "error_trace";
        case SegmentKind::PriorCode: return "prior_code";
        case SegmentKind::PerfHistory: return "perf_history";
        case SegmentKind::StrategyDirective: return "strategy_directive";
    }
    return "unknown";
}

std::size_t PromptBundle::count(SegmentKind kind) const {
    return static_cast<std::size_t>(std::count_if(
        segments.begin(), segments.end(), [kind](const PromptSegment& s) { return s.kind == kind; }));
}

std::string PromptBundle::render_user_message() const {
    std::string out;
    for (const auto& segment : segments) {
        if (!out.empty()) {
            out += "\n\n";
        }
        out += "## ";
        out += heading(segment.kind);
        out += "\n\n";
        out += segment.text;
    }
    return out;
}

std::string PromptBundle::fingerprint() const {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto mix = [&hash](std::string_view bytes) {
        for (const unsigned char c : bytes) {
            hash ^= c;
            hash *= 0x100000001b3ULL;
        }
        // Field separator so ("ab","c") and ("a","bc") differ.
        hash ^= 0xff;
        hash *= 0x100000001b3ULL;
    };
    mix(system_text);
    for (const auto& segment : segments) {
        mix(to_string(segment.kind));
        mix(segment.text);
    }
    return fmt::format("{:016x}", hash);
}

KnowledgeBlock load_knowledge(const std::filesystem::path& path) {
    return KnowledgeBlock{read_text_file(path)};
}

PromptBundle assemble_generation_prompt(const KernelTask& task,
                                        const std::optional<CorpusEntry>& exemplar,
                                        const std::optional<KnowledgeBlock>& knowledge) {
    PromptBundle bundle;
    bundle.system_text = std::string(kGeneratorSystem);
    if (knowledge) {
        bundle.segments.push_back({SegmentKind::KnowledgeBlock, knowledge->text});
    }
    if (exemplar) {
        std::string text;
        if (!exemplar->instruction.empty()) {
            text = exemplar->instruction + "\n\n";
        }
        text += fenced(exemplar->code);
        bundle.segments.push_back({SegmentKind::OneShotExemplar, std::move(text)});
    }
    bundle.segments.push_back({SegmentKind::Instruction, instruction_text(task)});
    return bundle;
}

PromptBundle assemble_reflection_prompt(const KernelTask& task, const std::string& failed_code,
                                        const std::string& error_trace,
                                        std::span<const ReflectionRound> earlier_rounds,
                                        std::size_t window) {
    if (error_trace.empty()) {
        throw EmptyTrace();
    }
    window = std::max<std::size_t>(window, 1);

    PromptBundle bundle;
    bundle.system_text = std::string(kReflectorSystem);
    bundle.segments.push_back({SegmentKind::Instruction, instruction_text(task)});

    const std::size_t from_history = std::min(window - 1, earlier_rounds.size());
    for (const auto& round : earlier_rounds.last(from_history)) {
        bundle.segments.push_back({SegmentKind::PriorCode, fenced(round.code)});
        bundle.segments.push_back({SegmentKind::ErrorTrace, round.error_trace});
    }
    bundle.segments.push_back({SegmentKind::PriorCode, fenced(failed_code)});
    bundle.segments.push_back({SegmentKind::ErrorTrace, error_trace});
    bundle.segments.push_back({SegmentKind::StrategyDirective, std::string(kReflectDirective)});
    return bundle;
}

PromptBundle assemble_reflection_prompt(const KernelTask& task, const std::string& failed_code,
                                        const std::string& error_trace, const AgentMemory& memory,
                                        std::size_t window) {
    return assemble_reflection_prompt(task, failed_code, error_trace,
                                      std::span<const ReflectionRound>(memory.reflections), window);
}

PromptBundle assemble_optimization_prompt(const KernelTask& task, const PerfHistory& history,
                                          const std::optional<KnowledgeBlock>& knowledge) {
    if (history.empty()) {
        throw EmptyHistory();
    }
    std::vector<const PerfEntry*> ordered;
    for (const auto& entry : history.entries()) {
        if (!entry.functionally_correct) {
            throw IncorrectEntry("performance history contains a candidate that failed its tests");
        }
        ordered.push_back(&entry);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const PerfEntry* a, const PerfEntry* b) { return a->speedup < b->speedup; });

    PromptBundle bundle;
    bundle.system_text = std::string(kOptimizerSystem);
    if (knowledge) {
        bundle.segments.push_back({SegmentKind::KnowledgeBlock, knowledge->text});
    }
    bundle.segments.push_back({SegmentKind::Instruction, instruction_text(task)});
    for (const PerfEntry* entry : ordered) {
        bundle.segments.push_back(
            {SegmentKind::PerfHistory,
             "speedup: " + speedup_label(entry->speedup) + "x\n" + fenced(entry->code)});
    }
    bundle.segments.push_back({SegmentKind::StrategyDirective, std::string(kOptimizeDirective)});
    return bundle;
}

std::optional<std::string> extract_code_block(std::string_view raw_text) {
    constexpr std::string_view kFence = "```";
    std::optional<std::string> last;
    std::size_t pos = 0;
    while (true) {
        const auto open = raw_text.find(kFence, pos);
        if (open == std::string_view::npos) {
            break;
        }
        // Opening fence: ``` plus an optional info string, then a newline.
        const auto body_start = raw_text.find('\n', open + kFence.size());
        if (body_start == std::string_view::npos) {
            break;
        }
        const auto close = raw_text.find(kFence, body_start + 1);
        if (close == std::string_view::npos) {
            break;
        }
        auto body = raw_text.substr(body_start + 1, close - body_start - 1);
        if (!body.empty() && body.back() == '\n') {
            body.remove_suffix(1);
        }
        last = std::string(body);
        pos = close + kFence.size();
    }
    return last;
}

json build_chat_request(const PromptBundle& bundle, const BackendConfig& config) {
    return {{"model", config.model_name},
            {"temperature", config.temperature},
            {"max_tokens", config.max_output_tokens},
            {"messages",
             json::array({{{"role", "system"}, {"content", bundle.system_text}},
                          {{"role", "user"}, {"content", bundle.render_user_message()}}})}};
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> transcript, std::string name)
    : name_(std::move(name)), transcript_(std::move(transcript)) {}

LLMResponse ScriptedBackend::complete(const PromptBundle& bundle, const BackendConfig& config) {
    std::lock_guard lock(mutex_);
    requests_.push_back(build_chat_request(bundle, config));
    if (next_ >= transcript_.size()) {
        throw TransportError(name_, fmt::format("transcript exhausted after {} responses",
                                                transcript_.size()));
    }
    LLMResponse response;
    response.raw_text = transcript_[next_++];
    response.extracted_code = extract_code_block(response.raw_text);
    response.usage.completion_tokens = static_cast<std::int64_t>(response.raw_text.size());
    return response;
}

std::vector<json> ScriptedBackend::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mutex_);
    return transcript_.size() - next_;
}

const std::vector<std::string>& Transcript::for_replica(std::size_t replica) const {
    static const std::vector<std::string> kEmpty;
    if (scripts.empty()) {
        return kEmpty;
    }
    return scripts[replica % scripts.size()];
}

Transcript load_transcript(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("transcript '" + path.string() + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw ParseError(e.what());
    }
    Transcript transcript;
    try {
        if (doc.is_array()) {
            transcript.scripts.push_back(doc.get<std::vector<std::string>>());
        } else if (doc.is_object() && doc.contains("responses")) {
            transcript.scripts.push_back(doc.at("responses").get<std::vector<std::string>>());
        } else if (doc.is_object() && doc.contains("replicas")) {
            transcript.scripts = doc.at("replicas").get<std::vector<std::vector<std::string>>>();
        } else {
            throw ParseError("transcript '" + path.string() +
                             "' must be an array of strings or have 'responses'/'replicas'");
        }
    } catch (const json::exception& e) {
        throw ParseError("transcript '" + path.string() + "': " + e.what());
    }
    return transcript;
}

}  // namespace kagent
