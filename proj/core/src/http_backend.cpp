#include <chrono>
#include <cstdlib>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "kagent/errors.hpp"
#include "kagent/llm.hpp"

namespace kagent {

using nlohmann::json;

namespace {

struct Endpoint {
    std::string scheme_host_port;
    std::string path;
};

Endpoint split_url(const std::string& url, const std::string& backend) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch match;
    if (!std::regex_match(url, match, kUrl)) {
        throw TransportError(backend, "malformed endpoint url '" + url + "'");
    }
    return {match[1].str(), match[2].matched ? match[2].str() : std::string("/")};
}

enum class Failure { None, Retryable, Timeout };

}  // namespace

HttpChatBackend::HttpChatBackend(TraceSink trace) : trace_(std::move(trace)) {}

LLMResponse HttpChatBackend::complete(const PromptBundle& bundle, const BackendConfig& config) {
    const std::string backend = config.identity();
    std::string api_key;
    if (!config.api_key_env.empty()) {
        const char* value = std::getenv(config.api_key_env.c_str());
        if (value == nullptr || *value == '\0') {
            throw AuthError(backend, "environment variable " + config.api_key_env + " is not set");
        }
        api_key = value;
    }

    const auto endpoint = split_url(config.endpoint_url, backend);
    httplib::Client client(endpoint.scheme_host_port);
    if (!client.is_valid()) {
        throw TransportError(backend, "cannot create a client for '" + endpoint.scheme_host_port +
                                          "' (https needs a build with OpenSSL)");
    }
    const auto timeout = config.request_timeout;
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                  static_cast<long>((timeout.count() % 1000) * 1000));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                            static_cast<long>((timeout.count() % 1000) * 1000));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                             static_cast<long>((timeout.count() % 1000) * 1000));

    httplib::Headers headers;
    if (!api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key);
    }
    const std::string body = build_chat_request(bundle, config).dump();
    if (trace_) {
        trace_(fmt::format("POST {} (Authorization: {})\n{}", config.endpoint_url,
                           api_key.empty() ? "none" : "Bearer ***", body));
    }

    std::string last_error;
    Failure last_failure = Failure::None;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0) {
            spdlog::warn("{}: retrying request ({}/{}) after: {}", backend, attempt,
                         config.max_retries, last_error);
            std::this_thread::sleep_for(config.retry_backoff * attempt);
        }
        const auto started = std::chrono::steady_clock::now();
        auto result = client.Post(endpoint.path, headers, body, "application/json");
        const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - started);

        if (!result) {
            const auto error = result.error();
            last_error = httplib::to_string(error);
            last_failure = (error == httplib::Error::ConnectionTimeout || latency >= timeout)
                               ? Failure::Timeout
                               : Failure::Retryable;
            continue;
        }
        if (trace_) {
            trace_(fmt::format("HTTP {}\n{}", result->status, result->body));
        }
        if (result->status == 401 || result->status == 403) {
            throw AuthError(backend, fmt::format("HTTP {}: {}", result->status, result->body));
        }
        if (result->status == 429 || result->status >= 500) {
            last_error = fmt::format("HTTP {}", result->status);
            last_failure = Failure::Retryable;
            continue;
        }
        if (result->status != 200) {
            throw TransportError(backend, fmt::format("HTTP {}: {}", result->status, result->body));
        }

        LLMResponse response;
        response.latency = latency;
        try {
            const auto doc = json::parse(result->body);
            response.raw_text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
            if (doc.contains("usage") && doc.at("usage").is_object()) {
                const auto& usage = doc.at("usage");
                response.usage.prompt_tokens = usage.value("prompt_tokens", std::int64_t{0});
                response.usage.completion_tokens = usage.value("completion_tokens", std::int64_t{0});
            }
        } catch (const json::exception& e) {
            throw TransportError(backend, std::string("malformed response body: ") + e.what());
        }
        response.extracted_code = extract_code_block(response.raw_text);
        return response;
    }

    if (last_failure == Failure::Timeout) {
        throw TimeoutError(backend, fmt::format("no response within {} ms after {} retries",
                                                timeout.count(), config.max_retries));
    }
    throw TransportError(backend, fmt::format("request failed after {} retries: {}",
                                              config.max_retries, last_error));
}

}  // namespace kagent
