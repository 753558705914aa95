// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unilm/engine.hpp"
#include "unilm/model.hpp"
#include "unilm/tokenizer.hpp"

namespace unilm {

enum class TaskClass { Chat, Translate, Summarize, Qa, Other };
enum class Privacy { Strict, Default };
enum class Route { Local, Remote };

std::string to_string(TaskClass task);
std::string to_string(Privacy privacy);
std::string to_string(Route route);
TaskClass task_class_from_string(const std::string& name); // InvalidConfig on unknown

struct GenerationRequest {
    std::string prompt_text;
    // When set, authoritative; otherwise prompt_text is tokenized with the
    // shared tokenizer before routing.
    std::optional<std::vector<std::uint32_t>> prompt_ids;
    GenerationParams params;
    TaskClass task_class = TaskClass::Chat;
    Privacy privacy = Privacy::Default;
    std::string adapter_name; // forwarded to the remote; the local engine runs as-is
    std::optional<std::uint64_t> deadline_ms;
};

struct RoutingPolicy {
    // Unset means: whatever leaves room for the request's max_new_tokens
    // inside the local context window. May not exceed the local max_seq_len.
    std::optional<std::size_t> local_max_prompt_tokens;
    std::set<TaskClass> remote_task_classes = {TaskClass::Translate, TaskClass::Summarize};
    bool allow_fallback = true;
    std::uint64_t health_ttl_ms = 2000;
};

// Policy file contents: JSON with any of local_max_prompt_tokens,
// remote_task_classes (array of class names), allow_fallback, health_ttl_ms.
RoutingPolicy policy_from_json(const std::string& text);
std::string policy_to_json(const RoutingPolicy& policy);

struct RouteDecision {
    Route route = Route::Local;
    std::vector<std::string> reasons; // never empty; the deciding rule comes first
    bool degraded = false;            // preferred route was remote but ran locally
};

struct ServerHealth {
    bool reachable = false;
    std::string model_id;
    std::uint64_t probed_at_ms = 0; // older than health_ttl_ms counts as unreachable
    std::size_t queue_depth = 0;
};

// Pure routing verdict. Rules in priority order: (1) strict privacy pins
// Local, (2) prompts too long for the local window go Remote, (3) task
// classes in the remote set go Remote, (4) everything else stays Local.
// A Remote verdict against an unreachable or stale server falls back to
// Local (degraded) when the policy allows it and the prompt fits.
// Requires req.prompt_ids to be resolved.
// Errors: PrivacyConflict (strict but does not fit), NoViableRoute.
RouteDecision decide_route(const GenerationRequest& req, const RoutingPolicy& policy,
                           const ModelConfig& local_config, const ServerHealth& health,
                           std::uint64_t now_ms);

// status 0 means the transport failed before an HTTP status arrived.
struct RemoteResult {
    int status = 0;
    std::string body;
};

// Client side of the serving protocol. Swappable so tests can count probes
// and script failures.
class RemoteClient {
public:
    virtual ~RemoteClient() = default;
    virtual ServerHealth probe(std::uint64_t now_ms) = 0; // GET /v1/health
    virtual RemoteResult generate(const std::string& json_body) = 0; // POST /v1/generate
};

// endpoint is "host:port" or "http://host:port".
std::unique_ptr<RemoteClient> make_http_remote_client(const std::string& endpoint,
                                                      int timeout_ms = 2000);

// One uncached probe of a live endpoint; failures come back reachable=false.
ServerHealth probe_server(const std::string& endpoint, int timeout_ms = 2000);

struct GenerationResponse {
    std::vector<std::uint32_t> tokens;
    std::string text;
    std::string model_id; // the engine that actually decoded
    Route route = Route::Local;
    bool degraded = false;
    std::uint64_t timing_ms = 0;
};

// Dispatches requests between the in-process engine and a remote endpoint.
// Health lookups go through a TTL cache; decisions themselves stay pure.
class Orchestrator {
public:
    // remote may be null (device-only deployment). clock defaults to a
    // monotonic millisecond counter.
    Orchestrator(std::shared_ptr<Engine> engine, Tokenizer tokenizer, RoutingPolicy policy,
                 std::shared_ptr<RemoteClient> remote = nullptr,
                 std::function<std::uint64_t()> clock = {});

    // The verdict for a request, without executing it.
    RouteDecision decide(const GenerationRequest& req);

    // Routes, dispatches, and on a mid-request remote transport failure
    // retries locally once when the policy allows fallback and the prompt
    // fits. Errors: NoViableRoute, PrivacyConflict, RemoteProtocolError,
    // LocalEngineError.
    GenerationResponse execute(const GenerationRequest& req);

    const RoutingPolicy& policy() const { return policy_; }
    const ModelConfig& local_config() const { return engine_->config(); }

private:
    std::vector<std::uint32_t> resolve_ids(const GenerationRequest& req) const;
    ServerHealth health_snapshot(std::uint64_t now_ms);
    GenerationResponse run_local(const std::vector<std::uint32_t>& ids,
                                 const GenerationParams& params) const;

    std::shared_ptr<Engine> engine_;
    Tokenizer tokenizer_;
    RoutingPolicy policy_;
    std::shared_ptr<RemoteClient> remote_;
    std::function<std::uint64_t()> clock_;

    std::mutex health_mu_; // cache reads/writes are whole-struct snapshots
    std::optional<ServerHealth> cached_health_;
};

} // namespace unilm
