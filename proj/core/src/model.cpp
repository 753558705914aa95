// SPDX-License-Identifier: MIT
#include "unilm/model.hpp"

#include <algorithm>
#include <string>

#include "rng.hpp"

namespace unilm {

void ModelConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) raise(ErrorCode::InvalidConfig, what);
    };
    need(vocab_size > 0, "vocab_size must be positive");
    need(hidden_size > 0, "hidden_size must be positive");
    need(n_layers > 0, "n_layers must be positive");
    need(n_heads > 0, "n_heads must be positive");
    need(n_kv_heads > 0, "n_kv_heads must be positive");
    need(intermediate_size > 0, "intermediate_size must be positive");
    need(max_seq_len > 0, "max_seq_len must be positive");
    need(hidden_size % n_heads == 0, "hidden_size must be divisible by n_heads");
    need(n_heads % n_kv_heads == 0, "n_heads must be divisible by n_kv_heads");
    need((hidden_size / n_heads) % 2 == 0, "head_dim must be even");
    need(rms_eps >= 0.0f, "rms_eps must be non-negative");
    need(rope_theta > 0.0f, "rope_theta must be positive");
}

ModelConfig config_for_preset(const std::string& name) {
    ModelConfig c;
    if (name == "toy") {
        c.vocab_size = 256;
        c.hidden_size = 64;
        c.n_layers = 2;
        c.n_heads = 4;
        c.n_kv_heads = 2;
        c.intermediate_size = 176;
        c.max_seq_len = 128;
    } else if (name == "slim34m") {
        c.vocab_size = 61788;
        c.hidden_size = 2048;
        c.n_layers = 8;
        c.n_heads = 32;
        c.n_kv_heads = 8;
        c.intermediate_size = 5632;
        c.max_seq_len = 2048;
    } else if (name == "manyak") {
        // Server-side preset: same block recipe at a larger depth. Declared
        // here for size accounting and serving, not a claim about any
        // particular trained model.
        c.vocab_size = 61788;
        c.hidden_size = 2048;
        c.n_layers = 24;
        c.n_heads = 16;
        c.n_kv_heads = 8;
        c.intermediate_size = 5632;
        c.max_seq_len = 2048;
    } else {
        raise(ErrorCode::InvalidConfig, "unknown preset: " + name);
    }
    c.model_id = name;
    c.validate();
    return c;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> checkpoint_layout(
    const ModelConfig& config) {
    config.validate();
    std::size_t h = config.hidden_size;
    std::size_t kvd = config.n_kv_heads * config.head_dim();
    std::size_t f = config.intermediate_size;

    std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
    layout.reserve(2 + config.n_layers * 9);
    layout.emplace_back("embed.weight", std::vector<std::size_t>{config.vocab_size, h});
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        std::string p = "layers." + std::to_string(i) + ".";
        layout.emplace_back(p + "attn_norm", std::vector<std::size_t>{h});
        layout.emplace_back(p + "attn.wq", std::vector<std::size_t>{h, h});
        layout.emplace_back(p + "attn.wk", std::vector<std::size_t>{kvd, h});
        layout.emplace_back(p + "attn.wv", std::vector<std::size_t>{kvd, h});
        layout.emplace_back(p + "attn.wo", std::vector<std::size_t>{h, h});
        layout.emplace_back(p + "ffn_norm", std::vector<std::size_t>{h});
        layout.emplace_back(p + "ffn.w_gate", std::vector<std::size_t>{f, h});
        layout.emplace_back(p + "ffn.w_up", std::vector<std::size_t>{f, h});
        layout.emplace_back(p + "ffn.w_down", std::vector<std::size_t>{h, f});
    }
    layout.emplace_back("final_norm", std::vector<std::size_t>{h});
    return layout;
}

std::size_t count_parameters(const ModelConfig& config) {
    config.validate();
    std::size_t h = config.hidden_size;
    std::size_t kvd = config.n_kv_heads * config.head_dim();
    std::size_t f = config.intermediate_size;
    // Embeddings are tied: counted once, reused as the logit projection.
    std::size_t per_layer = h * h        // wq
                            + 2 * h * kvd // wk, wv
                            + h * h       // wo
                            + 3 * h * f   // w_gate, w_up, w_down
                            + 2 * h;      // attn_norm, ffn_norm
    return config.vocab_size * h + config.n_layers * per_layer + h;
}

Checkpoint init_checkpoint(const ModelConfig& config, std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.config = config;
    detail::GaussianRng rng(seed);
    for (const auto& [name, shape] : checkpoint_layout(config)) {
        Tensor t = Tensor::zeros(shape);
        bool is_norm = name.find("norm") != std::string::npos;
        if (is_norm) {
            for (float& x : t.data) x = 1.0f;
        } else {
            for (float& x : t.data) x = static_cast<float>(rng.normal() * 0.02);
        }
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

void validate_checkpoint(const Checkpoint& ckpt) {
    auto layout = checkpoint_layout(ckpt.config);
    std::size_t expected = 0;
    for (const auto& [name, shape] : layout) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            raise(ErrorCode::ShapeViolation, "missing tensor: " + name);
        if (it->second.shape != shape)
            raise(ErrorCode::ShapeViolation, "tensor has wrong shape: " + name);
        ++expected;
    }
    if (ckpt.tensors.size() != expected) {
        for (const auto& [name, t] : ckpt.tensors) {
            (void)t;
            bool known = false;
            for (const auto& [lname, lshape] : layout) {
                (void)lshape;
                if (lname == name) {
                    known = true;
                    break;
                }
            }
            if (!known) raise(ErrorCode::ShapeViolation, "unexpected tensor: " + name);
        }
    }
}

Checkpoint extend_embeddings(const Checkpoint& ckpt, std::size_t new_vocab_size,
                             const EmbeddingInit& init) {
    const ModelConfig& cfg = ckpt.config;
    cfg.validate();
    if (new_vocab_size < cfg.vocab_size)
        raise(ErrorCode::ShrinkNotAllowed, "embedding extension cannot shrink the vocabulary");

    Checkpoint out = ckpt;
    out.config.vocab_size = new_vocab_size;
    if (new_vocab_size == cfg.vocab_size) return out;

    const Tensor& old = ckpt.tensors.at("embed.weight");
    std::size_t h = cfg.hidden_size;
    Tensor grown = Tensor::zeros({new_vocab_size, h});
    std::copy(old.data.begin(), old.data.end(), grown.data.begin());

    if (init.kind == EmbeddingInit::Kind::Mean) {
        std::vector<double> mean(h, 0.0);
        for (std::size_t r = 0; r < cfg.vocab_size; ++r)
            for (std::size_t c = 0; c < h; ++c) mean[c] += old.data[r * h + c];
        for (std::size_t c = 0; c < h; ++c) mean[c] /= static_cast<double>(cfg.vocab_size);
        for (std::size_t r = cfg.vocab_size; r < new_vocab_size; ++r)
            for (std::size_t c = 0; c < h; ++c)
                grown.data[r * h + c] = static_cast<float>(mean[c]);
    } else {
        detail::GaussianRng rng(init.seed);
        for (std::size_t r = cfg.vocab_size; r < new_vocab_size; ++r)
            for (std::size_t c = 0; c < h; ++c)
                grown.data[r * h + c] = static_cast<float>(rng.normal() * init.sigma);
    }
    out.tensors["embed.weight"] = std::move(grown);
    return out;
}

KVCache::KVCache(const ModelConfig& config) {
    config.validate();
    max_seq_len = config.max_seq_len;
    n_kv_heads = config.n_kv_heads;
    head_dim = config.head_dim();
    std::size_t per_layer = max_seq_len * n_kv_heads * head_dim;
    k.assign(config.n_layers, std::vector<float>(per_layer, 0.0f));
    v.assign(config.n_layers, std::vector<float>(per_layer, 0.0f));
}

} // namespace unilm
