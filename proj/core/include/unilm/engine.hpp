// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "unilm/adapter.hpp"
#include "unilm/model.hpp"
#include "unilm/tensor.hpp"

namespace unilm {

// One decoder pass over `tokens` starting at position cache.cur_len.
// Returns logits [T, vocab_size]; the cache advances by T. The embedding
// table doubles as the output projection. An attached adapter contributes
// (alpha/rank) * B*(A*x) on each projection it targets.
Tensor forward(const Checkpoint& ckpt, std::span<const std::uint32_t> tokens,
               KVCache& cache, const Adapter* adapter = nullptr);

// Greedy when temperature is 0 (ties break to the lowest id), otherwise
// top_k-truncated sampling driven by a PRNG seeded from params.seed. A stop
// id is emitted before stopping.
std::vector<std::uint32_t> generate(const Checkpoint& ckpt,
                                    std::span<const std::uint32_t> prompt_ids,
                                    const GenerationParams& params,
                                    const Adapter* adapter = nullptr);

// exp of the mean negative log-likelihood of ids[1..] given their prefixes.
double perplexity(const Checkpoint& ckpt, std::span<const std::uint32_t> ids,
                  const Adapter* adapter = nullptr);

// A checkpoint instance shared by concurrent sessions. Plain inference takes
// the lock shared; attach, detach, and adapter-scoped generation are
// exclusive, so adapter swaps never interleave with in-flight passes.
class Engine {
public:
    explicit Engine(Checkpoint ckpt); // validates the checkpoint

    const ModelConfig& config() const { return ckpt_.config; }
    const Checkpoint& checkpoint() const { return ckpt_; }

    void attach(const Adapter& adapter); // AlreadyAttached; ShapeMismatch
    void detach(const std::string& name); // NotAttached
    bool has_adapter() const;
    std::string attached_name() const; // empty when none

    std::vector<std::uint32_t> generate(std::span<const std::uint32_t> prompt_ids,
                                        const GenerationParams& params) const;

    // Runs with `adapter` in place of whatever is attached, holding the
    // exclusive lock for the whole request.
    std::vector<std::uint32_t> generate_with(const Adapter& adapter,
                                             std::span<const std::uint32_t> prompt_ids,
                                             const GenerationParams& params) const;

    double perplexity(std::span<const std::uint32_t> ids) const;

private:
    Checkpoint ckpt_;
    std::optional<Adapter> attached_;
    mutable std::shared_mutex mu_;
};

} // namespace unilm
