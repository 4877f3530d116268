#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <random>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kagent/errors.hpp"
#include "kagent/llm.hpp"
#include "kagent/retrieval.hpp"
#include "support/test_util.hpp"

using namespace kagent;
using nlohmann::json;

namespace {

std::vector<SegmentKind> kinds(const PromptBundle& bundle) {
    std::vector<SegmentKind> out;
    for (const auto& s : bundle.segments) {
        out.push_back(s.kind);
    }
    return out;
}

const KernelTask& sample_task() {
    static const KernelTask task = kagent::testing::make_task("fused_add");
    return task;
}

}  // namespace

TEST_CASE("ScriptedBackend replays its transcript") {
    BackendConfig config;
    PromptBundle bundle;
    bundle.segments.push_back({SegmentKind::Instruction, "write k"});

    SUBCASE("echo") {
        ScriptedBackend backend({"def k(): ..."});
        const auto response = backend.complete(bundle, config);
        CHECK(response.raw_text == "def k(): ...");
        CHECK_FALSE(response.extracted_code);
        CHECK(backend.remaining() == 0);
    }
    SUBCASE("empty transcript raises TransportError naming the backend") {
        ScriptedBackend backend({}, "mock-x");
        try {
            backend.complete(bundle, config);
            FAIL("expected TransportError");
        } catch (const TransportError& e) {
            CHECK(e.backend() == "mock-x");
        }
        CHECK(backend.requests().size() == 1);
    }
    SUBCASE("responses are consumed in order") {
        ScriptedBackend backend({"one", "```\ntwo\n```", "three"});
        CHECK(backend.complete(bundle, config).raw_text == "one");
        const auto second = backend.complete(bundle, config);
        CHECK(second.raw_text == "```\ntwo\n```");
        CHECK(second.extracted_code == std::optional<std::string>("two"));
        CHECK(backend.complete(bundle, config).raw_text == "three");
        CHECK_THROWS_AS(backend.complete(bundle, config), TransportError);
    }
    SUBCASE("concurrent callers each get a distinct response") {
        std::vector<std::string> script;
        for (int i = 0; i < 400; ++i) {
            script.push_back(std::to_string(i));
        }
        ScriptedBackend backend(script);
        std::mutex mutex;
        std::multiset<std::string> seen;
        std::vector<std::thread> threads;
        for (int t = 0; t < 8; ++t) {
            threads.emplace_back([&] {
                for (int i = 0; i < 50; ++i) {
                    auto text = backend.complete(bundle, config).raw_text;
                    std::lock_guard lock(mutex);
                    seen.insert(std::move(text));
                }
            });
        }
        for (auto& t : threads) {
            t.join();
        }
        CHECK(seen.size() == 400);
        CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 400);
    }
}

TEST_CASE("assemble_generation_prompt") {
    const CorpusEntry exemplar{"softmax_train", "def softmax(x): ...", "Softmax over rows"};
    const KnowledgeBlock knowledge{"MI300: 64-wide wavefronts, 64 KiB LDS per CU."};

    SUBCASE("direct prompting") {
        const auto bundle = assemble_generation_prompt(sample_task(), std::nullopt, std::nullopt);
        CHECK(kinds(bundle) == std::vector{SegmentKind::Instruction});
        CHECK(bundle.segments[0].text.find(sample_task().instruction) != std::string::npos);
    }
    SUBCASE("one-shot") {
        const auto bundle = assemble_generation_prompt(sample_task(), exemplar, std::nullopt);
        CHECK(kinds(bundle) == std::vector{SegmentKind::OneShotExemplar, SegmentKind::Instruction});
        CHECK(bundle.count(SegmentKind::OneShotExemplar) == 1);
    }
    SUBCASE("knowledge and one-shot") {
        const auto bundle = assemble_generation_prompt(sample_task(), exemplar, knowledge);
        CHECK(kinds(bundle) == std::vector{SegmentKind::KnowledgeBlock, SegmentKind::OneShotExemplar,
                                           SegmentKind::Instruction});
    }
    SUBCASE("pure function of its inputs") {
        const auto a = assemble_generation_prompt(sample_task(), exemplar, knowledge);
        const auto b = assemble_generation_prompt(sample_task(), exemplar, knowledge);
        CHECK(a == b);
        CHECK(a.fingerprint() == b.fingerprint());
        CHECK(a.fingerprint() !=
              assemble_generation_prompt(sample_task(), std::nullopt, knowledge).fingerprint());
    }
    SUBCASE("request body carries segments in declared order") {
        ScriptedBackend backend({"ok"});
        BackendConfig config;
        config.model_name = "test-model";
        backend.complete(assemble_generation_prompt(sample_task(), exemplar, knowledge), config);
        const auto body = backend.requests().at(0);
        CHECK(body.at("model") == "test-model");
        CHECK(body.at("temperature") == 1.0);
        REQUIRE(body.at("messages").size() == 2);
        CHECK(body.at("messages")[0].at("role") == "system");
        const auto user = body.at("messages")[1].at("content").get<std::string>();
        const auto k = user.find(knowledge.text);
        const auto e = user.find(exemplar.code);
        const auto i = user.find(sample_task().instruction);
        REQUIRE(k != std::string::npos);
        REQUIRE(e != std::string::npos);
        REQUIRE(i != std::string::npos);
        CHECK(k < e);
        CHECK(e < i);
    }
}

TEST_CASE("assemble_reflection_prompt") {
    SUBCASE("first failure") {
        const auto bundle =
            assemble_reflection_prompt(sample_task(), "bad code", "IndexError", AgentMemory{});
        CHECK(bundle.count(SegmentKind::PriorCode) == 1);
        CHECK(bundle.count(SegmentKind::ErrorTrace) == 1);
        CHECK(bundle.segments.back().kind == SegmentKind::StrategyDirective);
        CHECK(bundle.segments.back().text.find("Analyze the cause of failure and propose a solution") !=
              std::string::npos);
    }
    SUBCASE("third failure with a window of two") {
        AgentMemory memory;
        memory.reflections = {{"code1", "trace1"}, {"code2", "trace2"}};
        const auto bundle = assemble_reflection_prompt(sample_task(), "code3", "trace3", memory, 2);
        CHECK(bundle.count(SegmentKind::PriorCode) == 2);
        CHECK(bundle.count(SegmentKind::ErrorTrace) == 2);
        std::vector<std::string> traces;
        for (const auto& s : bundle.segments) {
            if (s.kind == SegmentKind::ErrorTrace) {
                traces.push_back(s.text);
            }
            CHECK(s.text.find("code1") == std::string::npos);
        }
        CHECK(traces == std::vector<std::string>{"trace2", "trace3"});
    }
    SUBCASE("empty trace") {
        CHECK_THROWS_AS(assemble_reflection_prompt(sample_task(), "code", "", AgentMemory{}), EmptyTrace);
    }
}

TEST_CASE("assemble_optimization_prompt") {
    auto speedups_in_order = [](const PromptBundle& bundle) {
        std::vector<std::string> labels;
        for (const auto& s : bundle.segments) {
            if (s.kind == SegmentKind::PerfHistory) {
                labels.push_back(s.text.substr(0, s.text.find('\n')));
            }
        }
        return labels;
    };

    SUBCASE("ascending order, best last") {
        // Built unsorted on purpose: the prompt must sort regardless.
        PerfHistory history;
        history.insert({"c14", 1.4, true});
        history.insert({"c09", 0.9, true});
        history.insert({"c11", 1.1, true});
        const auto bundle = assemble_optimization_prompt(sample_task(), history);
        CHECK(speedups_in_order(bundle) ==
              std::vector<std::string>{"speedup: 0.9000x", "speedup: 1.1000x", "speedup: 1.4000x"});
        CHECK(bundle.segments.back().kind == SegmentKind::StrategyDirective);
    }
    SUBCASE("single entry") {
        PerfHistory history({{"only", 2.0, true}});
        const auto bundle = assemble_optimization_prompt(sample_task(), history);
        CHECK(bundle.count(SegmentKind::PerfHistory) == 1);
    }
    SUBCASE("failed candidate rejected") {
        PerfHistory history({{"ok", 1.0, true}, {"broken", 3.0, false}});
        CHECK_THROWS_AS(assemble_optimization_prompt(sample_task(), history), IncorrectEntry);
    }
    SUBCASE("empty history") {
        CHECK_THROWS_AS(assemble_optimization_prompt(sample_task(), PerfHistory{}), EmptyHistory);
    }
}

TEST_CASE("PerfHistory keeps ascending order") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> speedup(0.1, 5.0);
    PerfHistory history;
    for (int i = 0; i < 200; ++i) {
        history.insert({"c" + std::to_string(i), speedup(rng), true});
        const auto entries = history.entries();
        CHECK(std::is_sorted(entries.begin(), entries.end(),
                             [](const PerfEntry& a, const PerfEntry& b) { return a.speedup < b.speedup; }));
    }
}

TEST_CASE("extract_code_block") {
    CHECK(extract_code_block("```\nA\n```") == std::optional<std::string>("A"));
    CHECK(extract_code_block("plan...```\nA\n``` then ```\nB\n```") == std::optional<std::string>("B"));
    CHECK_FALSE(extract_code_block("no code here"));
    CHECK(extract_code_block("```python\nimport triton\n```\n") ==
          std::optional<std::string>("import triton"));
    CHECK_FALSE(extract_code_block("```python\nunterminated"));
    CHECK(extract_code_block("```\nA\n```\n```\nunterminated") == std::optional<std::string>("A"));

    SUBCASE("a lone block returns its interior verbatim") {
        std::mt19937 rng(11);
        const std::string alphabet = "abc xyz\n\t()=+-#'\"`";
        std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
        std::uniform_int_distribution<int> length(0, 40);
        for (int trial = 0; trial < 300; ++trial) {
            std::string body;
            const int n = length(rng);
            for (int i = 0; i < n; ++i) {
                body += alphabet[pick(rng)];
            }
            if (body.find("``") != std::string::npos || (!body.empty() && body.back() == '`')) {
                continue;
            }
            CHECK(extract_code_block("```\n" + body + "\n```") == std::optional<std::string>(body));
        }
    }
}

TEST_CASE("backend config") {
    BackendConfig config;
    CHECK(config.temperature == 1.0);
    CHECK(validate_backend_config(config).empty());

    config.kind = BackendKind::OpenAICompatible;
    config.endpoint_url = "";
    config.temperature = -1.0;
    CHECK(validate_backend_config(config).size() == 2);

    BackendConfig http;
    http.kind = BackendKind::OpenAICompatible;
    http.endpoint_url = "https://example.invalid/v1/chat/completions";
    http.model_name = "gpt-4.1";
    http.api_key_env = "OPENAI_API_KEY";
    const auto back = backend_config_from_json(to_json(http));
    CHECK(back.endpoint_url == http.endpoint_url);
    CHECK(back.model_name == http.model_name);
    CHECK(back.api_key_env == http.api_key_env);
    CHECK(to_json(http).dump().find("sk-") == std::string::npos);

    CHECK_THROWS_AS(backend_config_from_json(json{{"kind", "carrier-pigeon"}}), ParseError);
}

TEST_CASE("load_transcript formats") {
    kagent::testing::TempDir dir;
    write_text_file(dir / "a.json", R"(["r1", "r2"])");
    write_text_file(dir / "b.json", R"({"replicas": [["x"], ["y", "z"]]})");
    write_text_file(dir / "c.json", R"({"nope": 1})");

    const auto shared = load_transcript(dir / "a.json");
    CHECK(shared.for_replica(0) == std::vector<std::string>{"r1", "r2"});
    CHECK(shared.for_replica(5) == std::vector<std::string>{"r1", "r2"});

    const auto per_replica = load_transcript(dir / "b.json");
    CHECK(per_replica.for_replica(0) == std::vector<std::string>{"x"});
    CHECK(per_replica.for_replica(1) == std::vector<std::string>{"y", "z"});

    CHECK_THROWS_AS(load_transcript(dir / "c.json"), ParseError);
}

// ---------------------------------------------------------------------------
// HTTP backend against an in-process server.

namespace {

class FakeChatServer {
public:
    explicit FakeChatServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            handler(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeChatServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

    std::atomic<int> hits{0};

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

json completion(const std::string& content) {
    return {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})},
            {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 34}}}};
}

BackendConfig http_config(const std::string& url) {
    BackendConfig config;
    config.kind = BackendKind::OpenAICompatible;
    config.endpoint_url = url;
    config.model_name = "test-model";
    config.api_key_env = "KAGENT_TEST_API_KEY";
    config.max_retries = 2;
    config.retry_backoff = std::chrono::milliseconds(1);
    config.request_timeout = std::chrono::milliseconds(2000);
    return config;
}

PromptBundle simple_bundle() {
    return assemble_generation_prompt(sample_task(), std::nullopt, std::nullopt);
}

}  // namespace

TEST_CASE("HttpChatBackend") {
    ::setenv("KAGENT_TEST_API_KEY", "sk-secret-value", 1);

    SUBCASE("successful completion") {
        std::string auth;
        json body;
        FakeChatServer server([&](const httplib::Request& req, httplib::Response& res) {
            auth = req.get_header_value("Authorization");
            body = json::parse(req.body);
            res.set_content(completion("plan\n```python\ndef k(): pass\n```").dump(), "application/json");
        });
        std::vector<std::string> traced;
        HttpChatBackend backend([&](std::string_view t) { traced.emplace_back(t); });
        const auto response = backend.complete(simple_bundle(), http_config(server.url()));
        CHECK(auth == "Bearer sk-secret-value");
        CHECK(body.at("model") == "test-model");
        CHECK(response.extracted_code == std::optional<std::string>("def k(): pass"));
        CHECK(response.usage.prompt_tokens == 12);
        CHECK(response.usage.completion_tokens == 34);
        REQUIRE(traced.size() == 2);
        for (const auto& t : traced) {
            CHECK(t.find("sk-secret-value") == std::string::npos);
        }
    }
    SUBCASE("transient failures are retried") {
        FakeChatServer server([&](const httplib::Request&, httplib::Response& res) {
            static std::atomic<int> calls{0};
            if (calls++ == 0) {
                res.status = 503;
                return;
            }
            res.set_content(completion("ok").dump(), "application/json");
        });
        HttpChatBackend backend;
        CHECK(backend.complete(simple_bundle(), http_config(server.url())).raw_text == "ok");
        CHECK(server.hits == 2);
    }
    SUBCASE("retry budget exhausted") {
        FakeChatServer server([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
        HttpChatBackend backend;
        CHECK_THROWS_AS(backend.complete(simple_bundle(), http_config(server.url())), TransportError);
        CHECK(server.hits == 3);
    }
    SUBCASE("auth failure is not retried") {
        FakeChatServer server([](const httplib::Request&, httplib::Response& res) { res.status = 401; });
        HttpChatBackend backend;
        CHECK_THROWS_AS(backend.complete(simple_bundle(), http_config(server.url())), AuthError);
        CHECK(server.hits == 1);
    }
    SUBCASE("missing credential") {
        FakeChatServer server([](const httplib::Request&, httplib::Response& res) { res.status = 200; });
        auto config = http_config(server.url());
        config.api_key_env = "KAGENT_TEST_UNSET_VARIABLE";
        ::unsetenv("KAGENT_TEST_UNSET_VARIABLE");
        HttpChatBackend backend;
        CHECK_THROWS_AS(backend.complete(simple_bundle(), config), AuthError);
        CHECK(server.hits == 0);
    }
    SUBCASE("slow server times out") {
        FakeChatServer server([](const httplib::Request&, httplib::Response& res) {
            std::this_thread::sleep_for(std::chrono::milliseconds(1500));
            res.set_content(completion("late").dump(), "application/json");
        });
        auto config = http_config(server.url());
        config.request_timeout = std::chrono::milliseconds(300);
        config.max_retries = 0;
        HttpChatBackend backend;
        CHECK_THROWS_AS(backend.complete(simple_bundle(), config), TimeoutError);
    }
    SUBCASE("malformed body") {
        FakeChatServer server([](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"choices\": []}", "application/json");
        });
        HttpChatBackend backend;
        CHECK_THROWS_AS(backend.complete(simple_bundle(), http_config(server.url())), TransportError);
    }
    SUBCASE("unreachable endpoint") {
        auto config = http_config("http://127.0.0.1:1/v1/chat/completions");
        config.max_retries = 1;
        HttpChatBackend backend;
        CHECK_THROWS_AS(backend.complete(simple_bundle(), config), TransportError);
    }
}
