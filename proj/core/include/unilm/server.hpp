// SPDX-License-Identifier: MIT
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "unilm/adapter.hpp"
#include "unilm/engine.hpp"
#include "unilm/tokenizer.hpp"

namespace unilm {

// One handler outcome: an HTTP status with a UTF-8 JSON body. Error bodies
// are {"error": code-string, "detail": text}.
struct HandlerResult {
    int status = 200;
    std::string body;
};

struct ServiceOptions {
    std::size_t max_adapter_bytes = 128ull * 1024 * 1024;
    std::size_t max_parallel_generations = 4;
};

// Request core of the service, independent of any transport so tests can
// drive it in-process. The checkpoint inside the engine never mutates;
// adapters attach per request under the engine's exclusivity contract, so
// requests that name no adapter are untouched by whatever is registered.
class ModelService {
public:
    ModelService(std::shared_ptr<Engine> engine, Tokenizer tokenizer,
                 ServiceOptions options = {});

    // POST /v1/generate. Body: "tokens" (authoritative) or "prompt", plus
    // max_new_tokens / temperature / top_k / seed / stop_ids / "adapter".
    // 400 bad_request, 404 adapter_not_found, 422 context_overflow,
    // 503 overloaded.
    HandlerResult handle_generate(const std::string& body);

    // POST /v1/adapters. Body: "name" plus "payload_b64" or "path".
    // Idempotent for a byte-identical payload; a different payload replaces
    // the registration only while no request is using it (409 otherwise).
    // 400 bad_request / config_mismatch, 413 payload_too_large.
    HandlerResult handle_load_adapter(const std::string& body);

    // GET /v1/health. Never takes the engine lock, so it answers while
    // generations are in flight.
    HandlerResult handle_health() const;

    // GET /v1/models: the checkpoint id plus every registered adapter.
    HandlerResult handle_models() const;

    // Test hook, invoked after a generation is admitted and before decoding.
    void set_generate_hook(std::function<void()> hook);

    const ModelConfig& config() const { return engine_->config(); }
    std::size_t adapter_count() const;

private:
    struct Registered {
        Adapter adapter;
        std::string bytes; // the exact payload, for the idempotency check
        std::size_t uses = 0;
    };

    HandlerResult run_generation(const std::string& adapter_name,
                                 const std::vector<std::uint32_t>& prompt_ids,
                                 const GenerationParams& params);

    std::shared_ptr<Engine> engine_;
    Tokenizer tokenizer_;
    ServiceOptions options_;
    std::chrono::steady_clock::time_point start_time_;

    mutable std::mutex mu_; // registry, in-flight count, request counter
    std::map<std::string, Registered> registry_;
    std::size_t in_flight_ = 0;
    std::uint64_t requests_served_ = 0;
    std::function<void()> generate_hook_;
};

// HTTP/1.1 front end over a ModelService; routes are thin shims around the
// handlers above.
class HttpServer {
public:
    explicit HttpServer(std::shared_ptr<ModelService> service);
    ~HttpServer(); // stops if still running

    // Binds and serves on a background thread. port 0 picks a free port.
    // Returns the bound port once the listener is accepting connections.
    int start(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace unilm
