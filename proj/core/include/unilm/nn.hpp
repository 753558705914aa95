// SPDX-License-Identifier: MIT
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>

#include "unilm/tensor.hpp"

namespace unilm {

// Head layout of an attention block. n_heads query heads share n_kv_heads
// key/value heads; head_dim must be even so RoPE can rotate value pairs.
struct AttentionGeometry {
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t head_dim = 0;
    float rope_theta = 10000.0f;

    void validate(std::size_t hidden_size) const;
};

float silu(float z);

// In-place stable softmax (max subtraction).
void softmax_inplace(std::span<float> v);

// y = x · Wᵀ with x: [..., in], W: [out, in]. No bias term exists anywhere
// in this API.
Tensor linear_nobias(const Tensor& x, const Tensor& W);

// y_i = x_i / sqrt(mean(x²) + eps) · weight_i, per trailing vector.
// eps = 0 is accepted; an all-zero vector then normalizes to zeros.
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps);

// Rotates consecutive pairs (x_{2j}, x_{2j+1}) by angle pos · theta^(-2j/head_dim).
// q: [T, n_heads, head_dim], k: [T, n_kv_heads, head_dim], |positions| == T.
std::pair<Tensor, Tensor> apply_rope(const Tensor& q, const Tensor& k,
                                     std::span<const std::size_t> positions, float theta);

// q: [T, n_heads, d], k/v: [S, n_kv_heads, d]. Query head h reads kv head
// h / (n_heads / n_kv_heads). Causal: query i sees key j iff j <= i + (S - T),
// which requires S >= T. scale defaults to 1/sqrt(d).
Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                     std::optional<float> scale = std::nullopt);

// y = W_down · (silu(W_gate·x) ⊙ (W_up·x)).
Tensor swiglu_ffn(const Tensor& x, const Tensor& w_gate, const Tensor& w_up,
                  const Tensor& w_down);

} // namespace unilm
