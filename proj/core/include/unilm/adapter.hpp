// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "unilm/error.hpp"
#include "unilm/model.hpp"
#include "unilm/tensor.hpp"

namespace unilm {

// Projections a low-rank adapter may hook, in canonical order.
const std::vector<std::string>& adapter_target_names();

// (in_dim, out_dim) of a projection under a model config. InvalidTarget on
// unknown names.
std::pair<std::size_t, std::size_t> projection_dims(const ModelConfig& config,
                                                    const std::string& target);

struct AdapterConfig {
    std::string name;
    std::size_t rank = 16;
    float alpha = 16.0f; // effective delta is (alpha/rank) * B*A
    std::vector<std::string> targets = {"wq", "wk", "wv", "wo"};

    void validate() const; // RankZero; InvalidTarget on empty/unknown/duplicate targets
};

// A is [rank, in_dim], B is [out_dim, rank]. B starts at zero so a fresh
// adapter leaves the host model untouched.
struct LowRankPair {
    Tensor a;
    Tensor b;
};

struct Adapter {
    AdapterConfig config;
    std::size_t n_layers = 0;
    std::map<std::string, LowRankPair> weights; // key "layers.{i}.{target}"

    const LowRankPair* find(std::size_t layer, const std::string& target) const;
};

Adapter init_adapter(const ModelConfig& model, const AdapterConfig& config,
                     std::uint64_t seed);

// Payload bytes of the serialized A/B matrices: n_layers * sum over targets of
// (rank*in + out*rank) * 4. The JSON header varies with name and target list
// and is not counted.
std::size_t adapter_size_bytes(const ModelConfig& model, const AdapterConfig& config);

// Checks every pair against the dims the model implies, raising `mismatch`
// on the first offender. Attach uses ShapeMismatch, file loading ConfigMismatch.
void validate_adapter_shapes(const ModelConfig& model, const Adapter& adapter,
                             ErrorCode mismatch);

// UNLA file: magic + version + length-prefixed JSON header + f32 payload,
// A then B per (layer, target), layer outer, targets in config order.
std::string serialize_adapter(const Adapter& adapter);
Adapter parse_adapter(const std::string& bytes, const ModelConfig& model);
void save_adapter(const Adapter& adapter, const std::string& path);
Adapter load_adapter(const std::string& path, const ModelConfig& model);

} // namespace unilm
