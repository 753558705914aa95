// SPDX-License-Identifier: MIT
#include "unilm/orchestrator.hpp"

#include <chrono>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "unilm/error.hpp"
#include "wire.hpp"

namespace unilm {

namespace {

std::uint64_t steady_now_ms() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

// Rule (2) predicate; doubles as the fallback feasibility test.
bool fits_locally(std::size_t prompt_tokens, const GenerationParams& params,
                  const RoutingPolicy& policy, const ModelConfig& local_config) {
    std::size_t limit;
    if (policy.local_max_prompt_tokens) {
        limit = *policy.local_max_prompt_tokens;
    } else {
        limit = local_config.max_seq_len > params.max_new_tokens
                    ? local_config.max_seq_len - params.max_new_tokens
                    : 0;
    }
    return prompt_tokens <= limit;
}

bool health_is_live(const ServerHealth& health, const RoutingPolicy& policy,
                    std::uint64_t now_ms) {
    if (!health.reachable) return false;
    if (now_ms < health.probed_at_ms) return true; // a probe from "now"
    return now_ms - health.probed_at_ms <= policy.health_ttl_ms;
}

} // namespace

std::string to_string(TaskClass task) {
    switch (task) {
    case TaskClass::Chat: return "chat";
    case TaskClass::Translate: return "translate";
    case TaskClass::Summarize: return "summarize";
    case TaskClass::Qa: return "qa";
    case TaskClass::Other: break;
    }
    return "other";
}

std::string to_string(Privacy privacy) {
    return privacy == Privacy::Strict ? "strict" : "default";
}

std::string to_string(Route route) { return route == Route::Local ? "local" : "remote"; }

TaskClass task_class_from_string(const std::string& name) {
    if (name == "chat") return TaskClass::Chat;
    if (name == "translate") return TaskClass::Translate;
    if (name == "summarize") return TaskClass::Summarize;
    if (name == "qa") return TaskClass::Qa;
    if (name == "other") return TaskClass::Other;
    raise(ErrorCode::InvalidConfig, "unknown task class: " + name);
}

RoutingPolicy policy_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        raise(ErrorCode::InvalidConfig, "policy must be a JSON object");
    RoutingPolicy p;
    if (j.contains("local_max_prompt_tokens")) {
        if (!j["local_max_prompt_tokens"].is_number_unsigned())
            raise(ErrorCode::InvalidConfig,
                  "local_max_prompt_tokens must be a non-negative integer");
        p.local_max_prompt_tokens = j["local_max_prompt_tokens"].get<std::size_t>();
    }
    if (j.contains("remote_task_classes")) {
        if (!j["remote_task_classes"].is_array())
            raise(ErrorCode::InvalidConfig, "remote_task_classes must be an array");
        p.remote_task_classes.clear();
        for (const auto& t : j["remote_task_classes"]) {
            if (!t.is_string())
                raise(ErrorCode::InvalidConfig, "remote_task_classes entries must be strings");
            p.remote_task_classes.insert(task_class_from_string(t.get<std::string>()));
        }
    }
    if (j.contains("allow_fallback")) {
        if (!j["allow_fallback"].is_boolean())
            raise(ErrorCode::InvalidConfig, "allow_fallback must be a boolean");
        p.allow_fallback = j["allow_fallback"].get<bool>();
    }
    if (j.contains("health_ttl_ms")) {
        if (!j["health_ttl_ms"].is_number_unsigned())
            raise(ErrorCode::InvalidConfig, "health_ttl_ms must be a non-negative integer");
        p.health_ttl_ms = j["health_ttl_ms"].get<std::uint64_t>();
    }
    return p;
}

std::string policy_to_json(const RoutingPolicy& policy) {
    nlohmann::json j;
    if (policy.local_max_prompt_tokens)
        j["local_max_prompt_tokens"] = *policy.local_max_prompt_tokens;
    nlohmann::json classes = nlohmann::json::array();
    for (TaskClass t : policy.remote_task_classes) classes.push_back(to_string(t));
    j["remote_task_classes"] = classes;
    j["allow_fallback"] = policy.allow_fallback;
    j["health_ttl_ms"] = policy.health_ttl_ms;
    return j.dump();
}

RouteDecision decide_route(const GenerationRequest& req, const RoutingPolicy& policy,
                           const ModelConfig& local_config, const ServerHealth& health,
                           std::uint64_t now_ms) {
    if (!req.prompt_ids)
        raise(ErrorCode::InvalidConfig, "prompt must be tokenized before routing");
    if (req.prompt_ids->empty()) raise(ErrorCode::EmptyPrompt, "prompt is empty");
    if (policy.local_max_prompt_tokens &&
        *policy.local_max_prompt_tokens > local_config.max_seq_len)
        raise(ErrorCode::InvalidConfig,
              "local_max_prompt_tokens exceeds the local context window");

    bool fits = fits_locally(req.prompt_ids->size(), req.params, policy, local_config);
    bool live = health_is_live(health, policy, now_ms);

    if (req.privacy == Privacy::Strict) {
        if (!fits)
            raise(ErrorCode::PrivacyConflict,
                  "strict privacy pins the request locally but the prompt does not fit");
        return {Route::Local, {"privacy"}, false};
    }

    std::string remote_reason;
    if (!fits) {
        remote_reason = "prompt_too_long";
    } else if (policy.remote_task_classes.count(req.task_class) != 0) {
        remote_reason = "task_class";
    } else {
        return {Route::Local, {"default"}, false};
    }

    if (live) return {Route::Remote, {remote_reason}, false};
    if (policy.allow_fallback && fits)
        return {Route::Local, {remote_reason, "fallback"}, true};
    raise(ErrorCode::NoViableRoute,
          fits ? "server unreachable and fallback is disabled"
               : "prompt does not fit locally and the server is unreachable");
}

namespace {

class HttpRemoteClient final : public RemoteClient {
public:
    HttpRemoteClient(std::string endpoint, int timeout_ms)
        : endpoint_(normalize(std::move(endpoint))), timeout_ms_(timeout_ms) {}

    ServerHealth probe(std::uint64_t now_ms) override {
        ServerHealth h;
        h.probed_at_ms = now_ms;
        httplib::Client cli(endpoint_);
        cli.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        cli.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        httplib::Result res = cli.Get("/v1/health");
        if (!res || res->status != 200) return h;
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) return h;
        h.reachable = j.contains("status") && j["status"] == "ok";
        if (j.contains("model_id") && j["model_id"].is_string())
            h.model_id = j["model_id"].get<std::string>();
        if (j.contains("queue_depth") && j["queue_depth"].is_number_unsigned())
            h.queue_depth = j["queue_depth"].get<std::size_t>();
        return h;
    }

    RemoteResult generate(const std::string& json_body) override {
        httplib::Client cli(endpoint_);
        cli.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        cli.set_read_timeout(60, 0); // decoding can be slow; connect is the gate
        httplib::Result res = cli.Post("/v1/generate", json_body, "application/json");
        if (!res) return {};
        return {res->status, res->body};
    }

private:
    static std::string normalize(std::string e) {
        return e.find("://") == std::string::npos ? "http://" + e : e;
    }

    std::string endpoint_;
    int timeout_ms_;
};

} // namespace

std::unique_ptr<RemoteClient> make_http_remote_client(const std::string& endpoint,
                                                      int timeout_ms) {
    return std::make_unique<HttpRemoteClient>(endpoint, timeout_ms);
}

ServerHealth probe_server(const std::string& endpoint, int timeout_ms) {
    return HttpRemoteClient(endpoint, timeout_ms).probe(steady_now_ms());
}

Orchestrator::Orchestrator(std::shared_ptr<Engine> engine, Tokenizer tokenizer,
                           RoutingPolicy policy, std::shared_ptr<RemoteClient> remote,
                           std::function<std::uint64_t()> clock)
    : engine_(std::move(engine)),
      tokenizer_(std::move(tokenizer)),
      policy_(std::move(policy)),
      remote_(std::move(remote)),
      clock_(clock ? std::move(clock) : steady_now_ms) {
    if (!engine_) raise(ErrorCode::InvalidConfig, "orchestrator needs a local engine");
}

std::vector<std::uint32_t> Orchestrator::resolve_ids(const GenerationRequest& req) const {
    if (req.prompt_ids) return *req.prompt_ids;
    return tokenizer_.encode(req.prompt_text);
}

ServerHealth Orchestrator::health_snapshot(std::uint64_t now_ms) {
    std::lock_guard<std::mutex> lk(health_mu_);
    if (cached_health_ && now_ms >= cached_health_->probed_at_ms &&
        now_ms - cached_health_->probed_at_ms <= policy_.health_ttl_ms)
        return *cached_health_;
    ServerHealth h;
    h.probed_at_ms = now_ms;
    if (remote_) {
        h = remote_->probe(now_ms);
        h.probed_at_ms = now_ms; // ages on the orchestrator's clock
    }
    cached_health_ = h;
    return h;
}

RouteDecision Orchestrator::decide(const GenerationRequest& req) {
    GenerationRequest r = req;
    r.prompt_ids = resolve_ids(req);
    std::uint64_t now = clock_();
    return decide_route(r, policy_, engine_->config(), health_snapshot(now), now);
}

GenerationResponse Orchestrator::run_local(const std::vector<std::uint32_t>& ids,
                                           const GenerationParams& params) const {
    GenerationResponse resp;
    try {
        resp.tokens = engine_->generate(ids, params);
    } catch (const Error& e) {
        raise(ErrorCode::LocalEngineError,
              std::string("local generation failed: ") + e.what());
    }
    resp.text = tokenizer_.decode(resp.tokens).text;
    resp.model_id = engine_->config().model_id;
    resp.route = Route::Local;
    return resp;
}

GenerationResponse Orchestrator::execute(const GenerationRequest& req) {
    std::uint64_t start = clock_();
    GenerationRequest r = req;
    r.prompt_ids = resolve_ids(req);
    std::uint64_t now = clock_();
    RouteDecision decision =
        decide_route(r, policy_, engine_->config(), health_snapshot(now), now);

    GenerationResponse resp;
    if (decision.route == Route::Remote) {
        if (!remote_) raise(ErrorCode::RemoteProtocolError, "no remote endpoint is configured");
        nlohmann::json body;
        body["tokens"] = *r.prompt_ids;
        detail::params_to_wire(r.params, body);
        if (!r.adapter_name.empty()) body["adapter"] = r.adapter_name;
        RemoteResult rr = remote_->generate(body.dump());
        if (rr.status == 200) {
            nlohmann::json j = nlohmann::json::parse(rr.body, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("tokens") ||
                !j["tokens"].is_array() || !j.contains("model_id") ||
                !j["model_id"].is_string())
                raise(ErrorCode::RemoteProtocolError, "malformed response from the remote");
            try {
                resp.tokens = detail::tokens_from_wire(j["tokens"]);
            } catch (const Error&) {
                raise(ErrorCode::RemoteProtocolError, "malformed token array from the remote");
            }
            resp.text = j.contains("text") && j["text"].is_string()
                            ? j["text"].get<std::string>()
                            : tokenizer_.decode(resp.tokens).text;
            resp.model_id = j["model_id"].get<std::string>();
            resp.route = Route::Remote;
        } else if (rr.status == 0) {
            // The transport died mid-request: one local retry if permitted.
            bool fits =
                fits_locally(r.prompt_ids->size(), r.params, policy_, engine_->config());
            if (policy_.allow_fallback && fits) {
                resp = run_local(*r.prompt_ids, r.params);
                resp.degraded = true;
            } else {
                raise(ErrorCode::RemoteProtocolError, "remote transport failure");
            }
        } else {
            std::string what = rr.body;
            nlohmann::json j = nlohmann::json::parse(rr.body, nullptr, false);
            if (!j.is_discarded() && j.is_object() && j.contains("detail") &&
                j["detail"].is_string())
                what = j["detail"].get<std::string>();
            raise(ErrorCode::RemoteProtocolError,
                  "remote returned status " + std::to_string(rr.status) + ": " + what);
        }
    } else {
        resp = run_local(*r.prompt_ids, r.params);
        resp.degraded = decision.degraded;
    }
    resp.timing_ms = clock_() - start;
    return resp;
}

} // namespace unilm
