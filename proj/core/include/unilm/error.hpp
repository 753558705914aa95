// SPDX-License-Identifier: MIT
#pragma once

#include <stdexcept>
#include <string>

namespace unilm {

// Every failure mode raised by the library. Order is load-bearing: the CLI
// maps code i to process exit code 10 + i (see README for the table).
enum class ErrorCode : int {
    EmptyCorpus = 0,
    TargetTooSmall,
    IdOutOfRange,
    AlphabetMismatch,
    MalformedFile,
    Io,
    ShapeMismatch,
    OddHeadDim,
    GroupingError,
    MalformedContainer,
    ShapeViolation,
    UnsupportedVersion,
    TokenOutOfRange,
    ContextOverflow,
    EmptyPrompt,
    SequenceTooShort,
    InvalidConfig,
    ShrinkNotAllowed,
    EmptyGroup,
    PlanLengthMismatch,
    CorruptIndices,
    TargetOutOfRange,
    InvalidTarget,
    RankZero,
    AlreadyAttached,
    NotAttached,
    ConfigMismatch,
    NoViableRoute,
    PrivacyConflict,
    RemoteProtocolError,
    LocalEngineError,
};

const char* error_code_name(ErrorCode code) noexcept;
int error_exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace unilm
