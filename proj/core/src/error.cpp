// SPDX-License-Identifier: MIT
#include "unilm/error.hpp"

namespace unilm {

namespace {
// Must stay in enum order.
constexpr const char* kNames[] = {
    "empty_corpus",
    "target_too_small",
    "id_out_of_range",
    "alphabet_mismatch",
    "malformed_file",
    "io",
    "shape_mismatch",
    "odd_head_dim",
    "grouping_error",
    "malformed_container",
    "shape_violation",
    "unsupported_version",
    "token_out_of_range",
    "context_overflow",
    "empty_prompt",
    "sequence_too_short",
    "invalid_config",
    "shrink_not_allowed",
    "empty_group",
    "plan_length_mismatch",
    "corrupt_indices",
    "target_out_of_range",
    "invalid_target",
    "rank_zero",
    "already_attached",
    "not_attached",
    "config_mismatch",
    "no_viable_route",
    "privacy_conflict",
    "remote_protocol_error",
    "local_engine_error",
};
} // namespace

const char* error_code_name(ErrorCode code) noexcept {
    auto i = static_cast<int>(code);
    if (i < 0 || i >= static_cast<int>(sizeof(kNames) / sizeof(kNames[0]))) return "unknown";
    return kNames[i];
}

int error_exit_code(ErrorCode code) noexcept {
    return 10 + static_cast<int>(code);
}

} // namespace unilm
