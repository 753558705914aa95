// SPDX-License-Identifier: MIT
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "unilm/nn.hpp"
#include "unilm/quant.hpp"
#include "unilm/tensor.hpp"
#include "unilm/tokenizer.hpp"

namespace {

unilm::Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> data(unilm::shape_numel(shape));
    for (float& x : data) x = dist(eng);
    return unilm::Tensor(std::move(shape), std::move(data));
}

void BM_LinearNoBias(benchmark::State& state) {
    const std::size_t dim = static_cast<std::size_t>(state.range(0));
    unilm::Tensor x = random_tensor({1, dim}, 1);
    unilm::Tensor w = random_tensor({dim, dim}, 2);
    for (auto _ : state) {
        unilm::Tensor y = unilm::linear_nobias(x, w);
        benchmark::DoNotOptimize(y.data.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(dim * dim));
}
BENCHMARK(BM_LinearNoBias)->Arg(64)->Arg(256)->Arg(1024);

void BM_GqaAttention(benchmark::State& state) {
    const std::size_t seq = static_cast<std::size_t>(state.range(0));
    const std::size_t n_heads = 8;
    const std::size_t n_kv_heads = 2;
    const std::size_t head_dim = 64;
    unilm::Tensor q = random_tensor({seq, n_heads, head_dim}, 3);
    unilm::Tensor k = random_tensor({seq, n_kv_heads, head_dim}, 4);
    unilm::Tensor v = random_tensor({seq, n_kv_heads, head_dim}, 5);
    for (auto _ : state) {
        unilm::Tensor out = unilm::gqa_attention(q, k, v, true);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_GqaAttention)->Arg(32)->Arg(128)->Arg(512);

void BM_RmsNormRope(benchmark::State& state) {
    const std::size_t seq = static_cast<std::size_t>(state.range(0));
    const std::size_t n_heads = 8;
    const std::size_t head_dim = 64;
    unilm::Tensor x = random_tensor({seq, n_heads * head_dim}, 6);
    unilm::Tensor gain = unilm::Tensor::full({n_heads * head_dim}, 1.0f);
    unilm::Tensor q = random_tensor({seq, n_heads, head_dim}, 7);
    unilm::Tensor k = random_tensor({seq, n_heads, head_dim}, 8);
    std::vector<std::size_t> positions(seq);
    for (std::size_t i = 0; i < seq; ++i) positions[i] = i;
    for (auto _ : state) {
        unilm::Tensor normed = unilm::rms_norm(x, gain, 1e-5f);
        auto [rq, rk] = unilm::apply_rope(q, k, positions, 10000.0f);
        benchmark::DoNotOptimize(normed.data.data());
        benchmark::DoNotOptimize(rq.data.data());
        benchmark::DoNotOptimize(rk.data.data());
    }
}
BENCHMARK(BM_RmsNormRope)->Arg(32)->Arg(256);

void BM_TokenizerEncode(benchmark::State& state) {
    unilm::Tokenizer tok = unilm::Tokenizer::byte_fallback();
    std::string text;
    std::mt19937_64 eng(7);
    const std::string words[] = {"model", "bahasa", "token", "kampung",
                                 "hybrid", "makan", "c++", "nusantara"};
    for (int i = 0; i < 200; ++i) {
        text += words[eng() % 8];
        text += ' ';
    }
    for (auto _ : state) {
        std::vector<std::uint32_t> ids = tok.encode(text);
        benchmark::DoNotOptimize(ids.data());
    }
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_TokenizerEncode);

void BM_PalettizeGroup(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    unilm::Tensor group = random_tensor({n}, 8);
    for (auto _ : state) {
        auto [codebook, indices] = unilm::palettize_group(group.data, 4);
        benchmark::DoNotOptimize(codebook.data());
        benchmark::DoNotOptimize(indices.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_PalettizeGroup)->Arg(64)->Arg(256);

} // namespace

BENCHMARK_MAIN();
