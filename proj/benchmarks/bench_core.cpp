#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "kagent/kagent.hpp"

namespace {

std::string synthetic_kernel(int seed, int lines) {
    std::mt19937 rng(seed);
    const char* names[] = {"x", "y", "acc", "offs", "mask", "pid", "BLOCK", "n_cols", "row", "stride"};
    const char* ops[] = {"+", "*", "-", "//", "<", "=="};
    std::string code = "import triton\nimport triton.language as tl\n\n@triton.jit\ndef k(x_ptr, y_ptr, n):\n";
    for (int i = 0; i < lines; ++i) {
        code += "    ";
        code += names[rng() % 10];
        code += " = tl.load(";
        code += names[rng() % 10];
        code += " ";
        code += ops[rng() % 6];
        code += " ";
        code += std::to_string(rng() % 128);
        code += ")\n";
    }
    return code;
}

void BM_PassAtK(benchmark::State& state) {
    const auto n = state.range(0);
    for (auto _ : state) {
        double sum = 0.0;
        for (std::int64_t k = 1; k <= n; ++k) {
            sum += kagent::pass_at_k(n, n / 3, k);
        }
        benchmark::DoNotOptimize(sum);
    }
}
BENCHMARK(BM_PassAtK)->Arg(10)->Arg(100)->Arg(1000);

void BM_Tokenize(benchmark::State& state) {
    const auto code = synthetic_kernel(1, static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(kagent::tokenize_code(code));
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * code.size()));
}
BENCHMARK(BM_Tokenize)->Arg(20)->Arg(200);

void BM_RetrieveTop1(benchmark::State& state) {
    std::vector<kagent::CorpusEntry> entries;
    for (int i = 0; i < state.range(0); ++i) {
        entries.push_back({"entry_" + std::to_string(i), synthetic_kernel(i, 40), ""});
    }
    const kagent::Corpus corpus(std::move(entries));
    const auto query = synthetic_kernel(-1, 40);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kagent::retrieve_top1(query, corpus));
    }
}
BENCHMARK(BM_RetrieveTop1)->Arg(100)->Arg(1000);

void BM_ExtractCodeBlock(benchmark::State& state) {
    std::string text;
    for (int i = 0; i < 8; ++i) {
        text += "Some reasoning about tiling.\n```python\n" + synthetic_kernel(i, 30) + "```\n";
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(kagent::extract_code_block(text));
    }
}
BENCHMARK(BM_ExtractCodeBlock);

}  // namespace

BENCHMARK_MAIN();
