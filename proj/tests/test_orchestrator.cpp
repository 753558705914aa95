// SPDX-License-Identifier: MIT
#include "doctest.h"

#include <array>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "unilm/engine.hpp"
#include "unilm/error.hpp"
#include "unilm/model.hpp"
#include "unilm/orchestrator.hpp"
#include "unilm/tokenizer.hpp"

using namespace unilm;

namespace {

enum class Outcome { Local, LocalDegraded, Remote, PrivacyConflict, NoViableRoute };

struct Row {
    Privacy privacy;
    bool fits;
    TaskClass task;
    bool live;
    bool fallback;
    Outcome want;
};

constexpr Privacy S = Privacy::Strict;
constexpr Privacy D = Privacy::Default;
constexpr TaskClass CH = TaskClass::Chat;
constexpr TaskClass TR = TaskClass::Translate;
constexpr TaskClass SU = TaskClass::Summarize;
constexpr TaskClass QA = TaskClass::Qa;
constexpr TaskClass OT = TaskClass::Other;
constexpr Outcome L = Outcome::Local;
constexpr Outcome LD = Outcome::LocalDegraded;
constexpr Outcome R = Outcome::Remote;
constexpr Outcome PC = Outcome::PrivacyConflict;
constexpr Outcome NV = Outcome::NoViableRoute;

// Every combination of privacy x fits x task x server-live x fallback, with
// the verdict written out by hand from the routing rules. Column order per
// task: (live, fb), (live, !fb), (!live, fb), (!live, !fb).
constexpr std::array<Row, 80> kTable = {{
    // strict privacy, prompt fits: always local, nothing else matters
    {S, true, CH, true, true, L},   {S, true, CH, true, false, L},
    {S, true, CH, false, true, L},  {S, true, CH, false, false, L},
    {S, true, TR, true, true, L},   {S, true, TR, true, false, L},
    {S, true, TR, false, true, L},  {S, true, TR, false, false, L},
    {S, true, SU, true, true, L},   {S, true, SU, true, false, L},
    {S, true, SU, false, true, L},  {S, true, SU, false, false, L},
    {S, true, QA, true, true, L},   {S, true, QA, true, false, L},
    {S, true, QA, false, true, L},  {S, true, QA, false, false, L},
    {S, true, OT, true, true, L},   {S, true, OT, true, false, L},
    {S, true, OT, false, true, L},  {S, true, OT, false, false, L},
    // strict privacy, prompt too long: never remote, so no route at all
    {S, false, CH, true, true, PC},  {S, false, CH, true, false, PC},
    {S, false, CH, false, true, PC}, {S, false, CH, false, false, PC},
    {S, false, TR, true, true, PC},  {S, false, TR, true, false, PC},
    {S, false, TR, false, true, PC}, {S, false, TR, false, false, PC},
    {S, false, SU, true, true, PC},  {S, false, SU, true, false, PC},
    {S, false, SU, false, true, PC}, {S, false, SU, false, false, PC},
    {S, false, QA, true, true, PC},  {S, false, QA, true, false, PC},
    {S, false, QA, false, true, PC}, {S, false, QA, false, false, PC},
    {S, false, OT, true, true, PC},  {S, false, OT, true, false, PC},
    {S, false, OT, false, true, PC}, {S, false, OT, false, false, PC},
    // default privacy, prompt fits: only the remote task set leaves the device
    {D, true, CH, true, true, L},   {D, true, CH, true, false, L},
    {D, true, CH, false, true, L},  {D, true, CH, false, false, L},
    {D, true, TR, true, true, R},   {D, true, TR, true, false, R},
    {D, true, TR, false, true, LD}, {D, true, TR, false, false, NV},
    {D, true, SU, true, true, R},   {D, true, SU, true, false, R},
    {D, true, SU, false, true, LD}, {D, true, SU, false, false, NV},
    {D, true, QA, true, true, L},   {D, true, QA, true, false, L},
    {D, true, QA, false, true, L},  {D, true, QA, false, false, L},
    {D, true, OT, true, true, L},   {D, true, OT, true, false, L},
    {D, true, OT, false, true, L},  {D, true, OT, false, false, L},
    // default privacy, prompt too long: remote or nothing, fallback can't help
    {D, false, CH, true, true, R},   {D, false, CH, true, false, R},
    {D, false, CH, false, true, NV}, {D, false, CH, false, false, NV},
    {D, false, TR, true, true, R},   {D, false, TR, true, false, R},
    {D, false, TR, false, true, NV}, {D, false, TR, false, false, NV},
    {D, false, SU, true, true, R},   {D, false, SU, true, false, R},
    {D, false, SU, false, true, NV}, {D, false, SU, false, false, NV},
    {D, false, QA, true, true, R},   {D, false, QA, true, false, R},
    {D, false, QA, false, true, NV}, {D, false, QA, false, false, NV},
    {D, false, OT, true, true, R},   {D, false, OT, true, false, R},
    {D, false, OT, false, true, NV}, {D, false, OT, false, false, NV},
}};

GenerationRequest request_for(const Row& row) {
    GenerationRequest req;
    // toy window is 128; with max_new_tokens 16 the default limit is 112.
    req.prompt_ids = std::vector<std::uint32_t>(row.fits ? 4 : 120, 1);
    req.params.max_new_tokens = 16;
    req.task_class = row.task;
    req.privacy = row.privacy;
    return req;
}

ServerHealth live_health(std::uint64_t now) {
    ServerHealth h;
    h.reachable = true;
    h.model_id = "manyak";
    h.probed_at_ms = now;
    return h;
}

ServerHealth down_health(std::uint64_t now) {
    ServerHealth h;
    h.probed_at_ms = now;
    return h;
}

ServerHealth stale_health(std::uint64_t now, std::uint64_t ttl) {
    ServerHealth h = live_health(now);
    h.probed_at_ms = now - ttl - 1; // one past the allowed age
    return h;
}

// Scriptable counterpart of the HTTP client.
struct FakeRemote : RemoteClient {
    bool reachable = true;
    std::string model_id = "manyak";
    int probes = 0;
    int generates = 0;
    std::vector<RemoteResult> script; // consumed front to back; empty = transport failure

    ServerHealth probe(std::uint64_t now_ms) override {
        ++probes;
        ServerHealth h;
        h.reachable = reachable;
        h.model_id = model_id;
        h.probed_at_ms = now_ms;
        return h;
    }
    RemoteResult generate(const std::string&) override {
        ++generates;
        if (script.empty()) return {};
        RemoteResult r = script.front();
        script.erase(script.begin());
        return r;
    }
};

std::shared_ptr<Engine> toy_engine() {
    static std::shared_ptr<Engine> engine =
        std::make_shared<Engine>(init_checkpoint(config_for_preset("toy"), 2024));
    return engine;
}

} // namespace

TEST_CASE("the routing table holds on all eighty input combinations") {
    ModelConfig toy = config_for_preset("toy");
    std::uint64_t now = 1000;

    // The table really is the full lattice.
    std::set<std::tuple<Privacy, bool, TaskClass, bool, bool>> seen;
    for (const Row& row : kTable)
        seen.insert({row.privacy, row.fits, row.task, row.live, row.fallback});
    REQUIRE(seen.size() == 80);

    // An unreachable server and a stale probe must behave identically.
    for (int down_kind = 0; down_kind < 2; ++down_kind) {
        for (const Row& row : kTable) {
            CAPTURE(to_string(row.privacy));
            CAPTURE(row.fits);
            CAPTURE(to_string(row.task));
            CAPTURE(row.live);
            CAPTURE(row.fallback);
            RoutingPolicy policy;
            policy.allow_fallback = row.fallback;
            policy.health_ttl_ms = 500;
            GenerationRequest req = request_for(row);
            ServerHealth health = row.live      ? live_health(now)
                                  : down_kind == 0 ? down_health(now)
                                                   : stale_health(now, policy.health_ttl_ms);

            std::string remote_reason = row.fits ? "task_class" : "prompt_too_long";
            switch (row.want) {
            case Outcome::Local: {
                RouteDecision d = decide_route(req, policy, toy, health, now);
                CHECK(d.route == Route::Local);
                CHECK_FALSE(d.degraded);
                REQUIRE(!d.reasons.empty());
                CHECK(d.reasons.front() ==
                      (row.privacy == Privacy::Strict ? "privacy" : "default"));
                break;
            }
            case Outcome::LocalDegraded: {
                RouteDecision d = decide_route(req, policy, toy, health, now);
                CHECK(d.route == Route::Local);
                CHECK(d.degraded);
                CHECK(d.reasons == std::vector<std::string>{remote_reason, "fallback"});
                break;
            }
            case Outcome::Remote: {
                RouteDecision d = decide_route(req, policy, toy, health, now);
                CHECK(d.route == Route::Remote);
                CHECK_FALSE(d.degraded);
                CHECK(d.reasons == std::vector<std::string>{remote_reason});
                break;
            }
            case Outcome::PrivacyConflict: {
                try {
                    decide_route(req, policy, toy, health, now);
                    FAIL("expected an error");
                } catch (const Error& e) {
                    CHECK(e.code() == ErrorCode::PrivacyConflict);
                }
                break;
            }
            case Outcome::NoViableRoute: {
                try {
                    decide_route(req, policy, toy, health, now);
                    FAIL("expected an error");
                } catch (const Error& e) {
                    CHECK(e.code() == ErrorCode::NoViableRoute);
                }
                break;
            }
            }
        }
    }
}

TEST_CASE("privacy dominance: strict requests never route remote") {
    // Scanned over the whole lattice; strict rows either pin Local or raise
    // PrivacyConflict, regardless of every other input.
    ModelConfig toy = config_for_preset("toy");
    for (const Row& row : kTable) {
        if (row.privacy != Privacy::Strict) continue;
        RoutingPolicy policy;
        policy.allow_fallback = row.fallback;
        GenerationRequest req = request_for(row);
        ServerHealth health = row.live ? live_health(1000) : down_health(1000);
        try {
            RouteDecision d = decide_route(req, policy, toy, health, 1000);
            CHECK(d.route == Route::Local);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::PrivacyConflict);
        }
    }
}

TEST_CASE("decide_route is a pure function of its inputs") {
    ModelConfig toy = config_for_preset("toy");
    GenerationRequest req;
    req.prompt_ids = std::vector<std::uint32_t>(4, 7);
    req.task_class = TaskClass::Translate;
    RoutingPolicy policy;
    ServerHealth health = live_health(1000);
    RouteDecision a = decide_route(req, policy, toy, health, 1000);
    RouteDecision b = decide_route(req, policy, toy, health, 1000);
    CHECK(a.route == b.route);
    CHECK(a.reasons == b.reasons);
    CHECK(a.degraded == b.degraded);
}

TEST_CASE("routing preconditions") {
    ModelConfig toy = config_for_preset("toy");
    RoutingPolicy policy;
    ServerHealth health = live_health(1000);

    SUBCASE("empty prompt") {
        GenerationRequest req;
        req.prompt_ids = std::vector<std::uint32_t>{};
        try {
            decide_route(req, policy, toy, health, 1000);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::EmptyPrompt);
        }
    }
    SUBCASE("unresolved prompt") {
        GenerationRequest req;
        req.prompt_text = "hello";
        try {
            decide_route(req, policy, toy, health, 1000);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::InvalidConfig);
        }
    }
    SUBCASE("policy cap beyond the context window") {
        GenerationRequest req;
        req.prompt_ids = std::vector<std::uint32_t>(4, 1);
        policy.local_max_prompt_tokens = 4096; // toy window is 128
        CHECK_THROWS_AS(decide_route(req, policy, toy, health, 1000), Error);
    }
}

TEST_CASE("the prompt-length rule follows the policy cap") {
    ModelConfig toy = config_for_preset("toy");
    RoutingPolicy policy;
    policy.local_max_prompt_tokens = 5;
    ServerHealth health = live_health(1000);

    GenerationRequest req;
    req.task_class = TaskClass::Chat; // not in the remote set
    req.prompt_ids = std::vector<std::uint32_t>(5, 1);
    CHECK(decide_route(req, policy, toy, health, 1000).route == Route::Local);
    req.prompt_ids = std::vector<std::uint32_t>(6, 1);
    RouteDecision d = decide_route(req, policy, toy, health, 1000);
    CHECK(d.route == Route::Remote);
    CHECK(d.reasons == std::vector<std::string>{"prompt_too_long"});
}

TEST_CASE("a prompt wider than the whole window must leave the device") {
    ModelConfig big = config_for_preset("slim34m"); // max_seq_len 2048
    GenerationRequest req;
    req.prompt_ids = std::vector<std::uint32_t>(4096, 1);
    req.params.max_new_tokens = 16;
    RouteDecision d = decide_route(req, RoutingPolicy{}, big, live_health(1000), 1000);
    CHECK(d.route == Route::Remote);
}

TEST_CASE("policy files") {
    SUBCASE("round-trip") {
        RoutingPolicy p;
        p.local_max_prompt_tokens = 64;
        p.remote_task_classes = {TaskClass::Qa};
        p.allow_fallback = false;
        p.health_ttl_ms = 123;
        RoutingPolicy q = policy_from_json(policy_to_json(p));
        CHECK(q.local_max_prompt_tokens == p.local_max_prompt_tokens);
        CHECK(q.remote_task_classes == p.remote_task_classes);
        CHECK(q.allow_fallback == p.allow_fallback);
        CHECK(q.health_ttl_ms == p.health_ttl_ms);
    }
    SUBCASE("defaults when fields are absent") {
        RoutingPolicy p = policy_from_json("{}");
        CHECK_FALSE(p.local_max_prompt_tokens.has_value());
        CHECK(p.remote_task_classes ==
              std::set<TaskClass>{TaskClass::Translate, TaskClass::Summarize});
        CHECK(p.allow_fallback);
    }
    SUBCASE("bad documents") {
        CHECK_THROWS_AS(policy_from_json("nope"), Error);
        CHECK_THROWS_AS(policy_from_json("[1,2]"), Error);
        CHECK_THROWS_AS(policy_from_json(R"({"allow_fallback":"yes"})"), Error);
        CHECK_THROWS_AS(policy_from_json(R"({"remote_task_classes":["transl8"]})"), Error);
        CHECK_THROWS_AS(policy_from_json(R"({"health_ttl_ms":-5})"), Error);
    }
}

TEST_CASE("task class names") {
    CHECK(task_class_from_string("translate") == TaskClass::Translate);
    CHECK(to_string(TaskClass::Qa) == "qa");
    CHECK(to_string(Route::Local) == "local");
    CHECK(to_string(Privacy::Strict) == "strict");
    CHECK_THROWS_AS(task_class_from_string("Translate"), Error);
}

TEST_CASE("health probes are cached for the TTL") {
    auto remote = std::make_shared<FakeRemote>();
    auto now = std::make_shared<std::uint64_t>(1000);
    RoutingPolicy policy;
    policy.health_ttl_ms = 500;
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), policy, remote,
                      [now] { return *now; });

    GenerationRequest req;
    req.prompt_text = "hello";
    req.task_class = TaskClass::Translate;

    CHECK(orch.decide(req).route == Route::Remote);
    CHECK(remote->probes == 1);
    *now += 100; // still inside the TTL
    CHECK(orch.decide(req).route == Route::Remote);
    CHECK(orch.decide(req).route == Route::Remote);
    CHECK(remote->probes == 1);
    *now += 501; // cache expired
    CHECK(orch.decide(req).route == Route::Remote);
    CHECK(remote->probes == 2);
}

TEST_CASE("execute runs locally and reports the local engine") {
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{});
    GenerationRequest req;
    req.prompt_text = "abc";
    req.params.max_new_tokens = 6;
    GenerationResponse resp = orch.execute(req);
    CHECK(resp.route == Route::Local);
    CHECK_FALSE(resp.degraded);
    CHECK(resp.model_id == "toy");

    GenerationParams params;
    params.max_new_tokens = 6;
    std::vector<std::uint32_t> ids = {97, 98, 99};
    CHECK(resp.tokens == toy_engine()->generate(ids, params));
    CHECK(resp.text == Tokenizer::byte_fallback().decode(resp.tokens).text);
}

TEST_CASE("execute dispatches remote verdicts over the client") {
    auto remote = std::make_shared<FakeRemote>();
    remote->script.push_back(
        {200, R"({"tokens":[5,6,7],"text":"x","model_id":"manyak"})"});
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{}, remote);
    GenerationRequest req;
    req.prompt_text = "translate me";
    req.task_class = TaskClass::Translate;
    GenerationResponse resp = orch.execute(req);
    CHECK(resp.route == Route::Remote);
    CHECK(resp.model_id == "manyak");
    CHECK(resp.tokens == std::vector<std::uint32_t>{5, 6, 7});
    CHECK(resp.text == "x");
    CHECK(remote->generates == 1);
}

TEST_CASE("a transport failure mid-request falls back to the device once") {
    auto remote = std::make_shared<FakeRemote>(); // reachable, but generate dies
    GenerationRequest req;
    req.prompt_text = "abc";
    req.params.max_new_tokens = 6;
    req.task_class = TaskClass::Summarize;

    SUBCASE("fallback allowed: local result, degraded") {
        Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{}, remote);
        GenerationResponse resp = orch.execute(req);
        CHECK(resp.route == Route::Local);
        CHECK(resp.degraded);
        CHECK(resp.model_id == "toy");
        CHECK(remote->generates == 1);
        GenerationParams params;
        params.max_new_tokens = 6;
        std::vector<std::uint32_t> ids = {97, 98, 99};
        CHECK(resp.tokens == toy_engine()->generate(ids, params));
    }
    SUBCASE("fallback disabled: the failure surfaces") {
        RoutingPolicy policy;
        policy.allow_fallback = false;
        Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), policy, remote);
        try {
            orch.execute(req);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::RemoteProtocolError);
        }
    }
}

TEST_CASE("protocol-level remote failures do not retry") {
    auto remote = std::make_shared<FakeRemote>();
    remote->script.push_back({500, R"({"error":"internal","detail":"boom"})"});
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{}, remote);
    GenerationRequest req;
    req.prompt_text = "abc";
    req.task_class = TaskClass::Translate;
    try {
        orch.execute(req);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RemoteProtocolError);
        CHECK(std::string(e.what()).find("boom") != std::string::npos);
    }
    CHECK(remote->generates == 1);
}

TEST_CASE("garbage from the remote is a protocol error") {
    auto remote = std::make_shared<FakeRemote>();
    remote->script.push_back({200, "not json at all"});
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{}, remote);
    GenerationRequest req;
    req.prompt_text = "abc";
    req.task_class = TaskClass::Translate;
    CHECK_THROWS_AS(orch.execute(req), Error);
}

TEST_CASE("no remote configured: remote tasks degrade to the device") {
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{});
    GenerationRequest req;
    req.prompt_text = "abc";
    req.params.max_new_tokens = 4;
    req.task_class = TaskClass::Summarize;
    GenerationResponse resp = orch.execute(req);
    CHECK(resp.route == Route::Local);
    CHECK(resp.degraded);
    CHECK(resp.model_id == "toy");
}

TEST_CASE("local engine failures carry the local error code") {
    Orchestrator orch(toy_engine(), Tokenizer::byte_fallback(), RoutingPolicy{});
    GenerationRequest req;
    req.prompt_ids = std::vector<std::uint32_t>{999}; // beyond the toy vocab
    try {
        orch.execute(req);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LocalEngineError);
    }
}
