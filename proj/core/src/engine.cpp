// SPDX-License-Identifier: MIT
#include "unilm/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numeric>

#include "rng.hpp"
#include "unilm/error.hpp"
#include "unilm/nn.hpp"

namespace unilm {

namespace {

// W·x plus the adapter's low-rank delta when (layer, target) is adapted.
Tensor project(const Tensor& x, const Tensor& w, const Adapter* adapter,
               std::size_t layer, const char* target) {
    Tensor y = linear_nobias(x, w);
    if (!adapter) return y;
    const LowRankPair* p = adapter->find(layer, target);
    if (!p) return y;
    float scale = adapter->config.alpha / static_cast<float>(adapter->config.rank);
    Tensor delta = linear_nobias(linear_nobias(x, p->a), p->b);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += scale * delta.data[i];
    return y;
}

std::uint32_t sample_token(const std::vector<float>& logits, const GenerationParams& params,
                           detail::GaussianRng& rng) {
    std::size_t n = logits.size();
    if (params.temperature == 0.0f) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (logits[i] > logits[best]) best = i;
        return static_cast<std::uint32_t>(best);
    }
    std::size_t k = params.top_k == 0 ? n : std::min(params.top_k, n);
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });
    std::vector<double> p(k);
    double m = logits[order[0]];
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp((static_cast<double>(logits[order[i]]) - m) /
                        static_cast<double>(params.temperature));
        sum += p[i];
    }
    double u = rng.uniform() * sum;
    double cum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        cum += p[i];
        if (u < cum) return order[i];
    }
    return order[k - 1];
}

} // namespace

Tensor forward(const Checkpoint& ckpt, std::span<const std::uint32_t> tokens,
               KVCache& cache, const Adapter* adapter) {
    const ModelConfig& cfg = ckpt.config;
    std::size_t t = tokens.size();
    std::size_t h = cfg.hidden_size;
    std::size_t d = cfg.head_dim();
    std::size_t kvw = cfg.n_kv_heads * d; // kv row width
    std::size_t base = cache.cur_len;

    for (std::uint32_t id : tokens)
        if (id >= cfg.vocab_size)
            raise(ErrorCode::TokenOutOfRange,
                  "token " + std::to_string(id) + " exceeds vocab " +
                      std::to_string(cfg.vocab_size));
    if (base + t > cfg.max_seq_len)
        raise(ErrorCode::ContextOverflow,
              "sequence of " + std::to_string(base + t) + " exceeds max length " +
                  std::to_string(cfg.max_seq_len));

    const Tensor& embed = ckpt.tensors.at("embed.weight");
    Tensor x({t, h}, std::vector<float>(t * h));
    for (std::size_t i = 0; i < t; ++i)
        std::memcpy(&x.data[i * h], &embed.data[tokens[i] * h], h * sizeof(float));

    std::vector<std::size_t> positions(t);
    std::iota(positions.begin(), positions.end(), base);

    for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
        std::string p = "layers." + std::to_string(layer) + ".";
        Tensor xn = rms_norm(x, ckpt.tensors.at(p + "attn_norm"), cfg.rms_eps);

        Tensor q = project(xn, ckpt.tensors.at(p + "attn.wq"), adapter, layer, "wq");
        Tensor k = project(xn, ckpt.tensors.at(p + "attn.wk"), adapter, layer, "wk");
        Tensor v = project(xn, ckpt.tensors.at(p + "attn.wv"), adapter, layer, "wv");
        q.shape = {t, cfg.n_heads, d};
        k.shape = {t, cfg.n_kv_heads, d};
        auto [qr, kr] = apply_rope(q, k, positions, cfg.rope_theta);

        std::copy(kr.data.begin(), kr.data.end(), cache.k[layer].begin() + base * kvw);
        std::copy(v.data.begin(), v.data.end(), cache.v[layer].begin() + base * kvw);

        std::size_t s = base + t;
        Tensor keys({s, cfg.n_kv_heads, d},
                    std::vector<float>(cache.k[layer].begin(),
                                       cache.k[layer].begin() + s * kvw));
        Tensor vals({s, cfg.n_kv_heads, d},
                    std::vector<float>(cache.v[layer].begin(),
                                       cache.v[layer].begin() + s * kvw));

        Tensor attn = gqa_attention(qr, keys, vals, /*causal=*/true);
        attn.shape = {t, h};
        Tensor ao = project(attn, ckpt.tensors.at(p + "attn.wo"), adapter, layer, "wo");
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += ao.data[i];

        Tensor fn = rms_norm(x, ckpt.tensors.at(p + "ffn_norm"), cfg.rms_eps);
        Tensor g = project(fn, ckpt.tensors.at(p + "ffn.w_gate"), adapter, layer, "w_gate");
        Tensor u = project(fn, ckpt.tensors.at(p + "ffn.w_up"), adapter, layer, "w_up");
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = silu(g.data[i]) * u.data[i];
        Tensor dn = project(g, ckpt.tensors.at(p + "ffn.w_down"), adapter, layer, "w_down");
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += dn.data[i];
    }
    cache.cur_len = base + t;

    Tensor xf = rms_norm(x, ckpt.tensors.at("final_norm"), cfg.rms_eps);
    return linear_nobias(xf, embed);
}

std::vector<std::uint32_t> generate(const Checkpoint& ckpt,
                                    std::span<const std::uint32_t> prompt_ids,
                                    const GenerationParams& params, const Adapter* adapter) {
    const ModelConfig& cfg = ckpt.config;
    if (prompt_ids.empty()) raise(ErrorCode::EmptyPrompt, "prompt must hold at least one token");
    if (prompt_ids.size() + params.max_new_tokens > cfg.max_seq_len)
        raise(ErrorCode::ContextOverflow,
              "prompt plus max_new_tokens exceeds max length " +
                  std::to_string(cfg.max_seq_len));

    std::vector<std::uint32_t> out;
    if (params.max_new_tokens == 0) return out;

    detail::GaussianRng rng(params.seed);
    KVCache cache(cfg);
    Tensor logits = forward(ckpt, prompt_ids, cache, adapter);
    std::size_t v = cfg.vocab_size;
    std::vector<float> row(logits.data.end() - v, logits.data.end());

    while (true) {
        std::uint32_t next = sample_token(row, params, rng);
        out.push_back(next);
        bool stop = std::find(params.stop_ids.begin(), params.stop_ids.end(), next) !=
                    params.stop_ids.end();
        if (stop || out.size() == params.max_new_tokens) break;
        std::uint32_t fed = next;
        logits = forward(ckpt, std::span<const std::uint32_t>(&fed, 1), cache, adapter);
        row.assign(logits.data.end() - v, logits.data.end());
    }
    return out;
}

double perplexity(const Checkpoint& ckpt, std::span<const std::uint32_t> ids,
                  const Adapter* adapter) {
    if (ids.size() < 2)
        raise(ErrorCode::SequenceTooShort, "perplexity needs at least two tokens");
    KVCache cache(ckpt.config);
    Tensor logits = forward(ckpt, ids, cache, adapter);
    std::size_t v = ckpt.config.vocab_size;

    double total = 0.0;
    for (std::size_t i = 1; i < ids.size(); ++i) {
        const float* row = &logits.data[(i - 1) * v];
        double m = row[0];
        for (std::size_t j = 1; j < v; ++j) m = std::max(m, static_cast<double>(row[j]));
        double lse = 0.0;
        for (std::size_t j = 0; j < v; ++j) lse += std::exp(static_cast<double>(row[j]) - m);
        total += static_cast<double>(row[ids[i]]) - m - std::log(lse);
    }
    return std::exp(-total / static_cast<double>(ids.size() - 1));
}

Engine::Engine(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {
    ckpt_.config.validate();
    validate_checkpoint(ckpt_);
}

void Engine::attach(const Adapter& adapter) {
    std::unique_lock lock(mu_);
    if (attached_)
        raise(ErrorCode::AlreadyAttached, "adapter already attached: " + attached_->config.name);
    validate_adapter_shapes(ckpt_.config, adapter, ErrorCode::ShapeMismatch);
    attached_ = adapter;
}

void Engine::detach(const std::string& name) {
    std::unique_lock lock(mu_);
    if (!attached_) raise(ErrorCode::NotAttached, "no adapter attached");
    if (attached_->config.name != name)
        raise(ErrorCode::NotAttached, "attached adapter is " + attached_->config.name +
                                          ", not " + name);
    attached_.reset();
}

bool Engine::has_adapter() const {
    std::shared_lock lock(mu_);
    return attached_.has_value();
}

std::string Engine::attached_name() const {
    std::shared_lock lock(mu_);
    return attached_ ? attached_->config.name : std::string();
}

std::vector<std::uint32_t> Engine::generate(std::span<const std::uint32_t> prompt_ids,
                                            const GenerationParams& params) const {
    std::shared_lock lock(mu_);
    return unilm::generate(ckpt_, prompt_ids, params, attached_ ? &*attached_ : nullptr);
}

std::vector<std::uint32_t> Engine::generate_with(const Adapter& adapter,
                                                 std::span<const std::uint32_t> prompt_ids,
                                                 const GenerationParams& params) const {
    std::unique_lock lock(mu_);
    validate_adapter_shapes(ckpt_.config, adapter, ErrorCode::ShapeMismatch);
    return unilm::generate(ckpt_, prompt_ids, params, &adapter);
}

double Engine::perplexity(std::span<const std::uint32_t> ids) const {
    std::shared_lock lock(mu_);
    return unilm::perplexity(ckpt_, ids, attached_ ? &*attached_ : nullptr);
}

} // namespace unilm
