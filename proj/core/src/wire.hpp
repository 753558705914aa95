// SPDX-License-Identifier: MIT
#pragma once

// JSON field conventions shared by the service handlers and the client side
// of the protocol. Kept in one place so the two ends cannot drift.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "unilm/error.hpp"
#include "unilm/model.hpp"

namespace unilm::detail {

inline void params_to_wire(const GenerationParams& p, nlohmann::json& body) {
    body["max_new_tokens"] = p.max_new_tokens;
    body["temperature"] = p.temperature;
    body["top_k"] = p.top_k;
    body["seed"] = p.seed;
    if (!p.stop_ids.empty()) body["stop_ids"] = p.stop_ids;
}

// Raises InvalidConfig on wrong types; absent fields keep their defaults.
inline GenerationParams params_from_wire(const nlohmann::json& body) {
    GenerationParams p;
    if (body.contains("max_new_tokens")) {
        if (!body["max_new_tokens"].is_number_unsigned())
            raise(ErrorCode::InvalidConfig, "max_new_tokens must be a non-negative integer");
        p.max_new_tokens = body["max_new_tokens"].get<std::size_t>();
    }
    if (body.contains("temperature")) {
        if (!body["temperature"].is_number())
            raise(ErrorCode::InvalidConfig, "temperature must be a number");
        p.temperature = body["temperature"].get<float>();
        if (p.temperature < 0.0f) raise(ErrorCode::InvalidConfig, "temperature must be >= 0");
    }
    if (body.contains("top_k")) {
        if (!body["top_k"].is_number_unsigned())
            raise(ErrorCode::InvalidConfig, "top_k must be a non-negative integer");
        p.top_k = body["top_k"].get<std::size_t>();
    }
    if (body.contains("seed")) {
        if (!body["seed"].is_number_unsigned())
            raise(ErrorCode::InvalidConfig, "seed must be a non-negative integer");
        p.seed = body["seed"].get<std::uint64_t>();
    }
    if (body.contains("stop_ids")) {
        if (!body["stop_ids"].is_array())
            raise(ErrorCode::InvalidConfig, "stop_ids must be an array");
        for (const auto& v : body["stop_ids"]) {
            if (!v.is_number_unsigned())
                raise(ErrorCode::InvalidConfig, "stop_ids entries must be non-negative integers");
            p.stop_ids.push_back(v.get<std::uint32_t>());
        }
    }
    return p;
}

// Token array out of a request body. Empty optional when the field is absent.
inline std::vector<std::uint32_t> tokens_from_wire(const nlohmann::json& arr) {
    std::vector<std::uint32_t> ids;
    for (const auto& v : arr) {
        if (!v.is_number_unsigned())
            raise(ErrorCode::InvalidConfig, "tokens entries must be non-negative integers");
        ids.push_back(v.get<std::uint32_t>());
    }
    return ids;
}

} // namespace unilm::detail
