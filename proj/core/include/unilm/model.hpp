// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "unilm/tensor.hpp"

namespace unilm {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden_size = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t intermediate_size = 0;
    std::size_t max_seq_len = 0;
    float rms_eps = 1e-5f;
    float rope_theta = 10000.0f;
    bool tied_embeddings = true; // output projection always reuses embed.weight
    std::string model_id;

    std::size_t head_dim() const noexcept { return n_heads ? hidden_size / n_heads : 0; }
    void validate() const; // InvalidConfig on zero dims or bad divisibility

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Built-in presets: "toy", "slim34m", "manyak".
ModelConfig config_for_preset(const std::string& name);

// Weights by name. Naming scheme: embed.weight, layers.{i}.attn.{wq,wk,wv,wo},
// layers.{i}.attn_norm, layers.{i}.ffn.{w_gate,w_up,w_down}, layers.{i}.ffn_norm,
// final_norm. There is no output-projection tensor; logits reuse embed.weight.
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;
};

// Expected (name, shape) pairs for a config, in canonical serialization order.
std::vector<std::pair<std::string, std::vector<std::size_t>>> checkpoint_layout(
    const ModelConfig& config);

// Closed-form parameter count; equals the sum of tensor sizes of a checkpoint
// built from the same config.
std::size_t count_parameters(const ModelConfig& config);

// Seeded random initialization: norm vectors are ones, everything else is
// Gaussian with sigma 0.02. Bit-stable across platforms for a given seed.
Checkpoint init_checkpoint(const ModelConfig& config, std::uint64_t seed);

// Throws ShapeViolation naming the first missing, misshapen, or unexpected tensor.
void validate_checkpoint(const Checkpoint& ckpt);

struct EmbeddingInit {
    enum class Kind { Mean, Gaussian };
    Kind kind = Kind::Mean;
    float sigma = 0.02f;
    std::uint64_t seed = 0;

    static EmbeddingInit mean() { return {Kind::Mean, 0.0f, 0}; }
    static EmbeddingInit gaussian(float sigma, std::uint64_t seed) {
        return {Kind::Gaussian, sigma, seed};
    }
};

// Grows embed.weight to new_vocab_size rows. Original rows are preserved
// bitwise; other tensors are untouched.
Checkpoint extend_embeddings(const Checkpoint& ckpt, std::size_t new_vocab_size,
                             const EmbeddingInit& init);

// UNLM container. save does not validate, so malformed checkpoints can be
// written for negative tests; load always validates.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Per-layer rotated key/value rows for positions < cur_len. Single writer.
struct KVCache {
    explicit KVCache(const ModelConfig& config);

    std::size_t cur_len = 0;
    std::size_t max_seq_len = 0;
    std::size_t n_kv_heads = 0;
    std::size_t head_dim = 0;
    std::vector<std::vector<float>> k, v; // [layer][max_seq * n_kv * head_dim]
};

struct GenerationParams {
    std::size_t max_new_tokens = 16;
    float temperature = 0.0f; // 0 = argmax (ties -> lowest id)
    std::size_t top_k = 0;    // 0 = unlimited
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> stop_ids;
};

} // namespace unilm
