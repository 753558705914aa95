// SPDX-License-Identifier: MIT
#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace unilm::cli {

// Dispatches one command-line invocation. args excludes the program name.
// Streams are injected so tests can drive the tool in-process; `in` feeds
// interactive generation and `serve` (which runs until it hits EOF).
// Returns 0 on success, CLI11's usage-error codes (100+) for bad
// invocations, and 10 + ErrorCode for library failures.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err,
            std::istream& in);

} // namespace unilm::cli
