// SPDX-License-Identifier: MIT
#include "unilm/server.hpp"

#include <thread>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "base64.hpp"
#include "io_util.hpp"
#include "unilm/error.hpp"
#include "wire.hpp"

namespace unilm {

namespace {

HandlerResult error_result(int status, const std::string& code, const std::string& detail) {
    nlohmann::json j;
    j["error"] = code;
    j["detail"] = detail;
    return {status, j.dump()};
}

} // namespace

ModelService::ModelService(std::shared_ptr<Engine> engine, Tokenizer tokenizer,
                           ServiceOptions options)
    : engine_(std::move(engine)),
      tokenizer_(std::move(tokenizer)),
      options_(options),
      start_time_(std::chrono::steady_clock::now()) {
    if (!engine_) raise(ErrorCode::InvalidConfig, "service needs an engine");
    if (options_.max_parallel_generations == 0)
        raise(ErrorCode::InvalidConfig, "worker count must be at least 1");
}

HandlerResult ModelService::handle_generate(const std::string& body) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        ++requests_served_;
    }
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        return error_result(400, "bad_request", "body is not a JSON object");

    std::vector<std::uint32_t> ids;
    if (j.contains("tokens")) {
        if (!j["tokens"].is_array())
            return error_result(400, "bad_request", "tokens must be an array");
        try {
            ids = detail::tokens_from_wire(j["tokens"]);
        } catch (const Error& e) {
            return error_result(400, "bad_request", e.what());
        }
    } else if (j.contains("prompt")) {
        if (!j["prompt"].is_string())
            return error_result(400, "bad_request", "prompt must be a string");
        ids = tokenizer_.encode(j["prompt"].get<std::string>());
    } else {
        return error_result(400, "bad_request", "body needs a prompt or a tokens array");
    }

    GenerationParams params;
    try {
        params = detail::params_from_wire(j);
    } catch (const Error& e) {
        return error_result(400, "bad_request", e.what());
    }

    std::string adapter_name;
    if (j.contains("adapter")) {
        if (!j["adapter"].is_string())
            return error_result(400, "bad_request", "adapter must be a string");
        adapter_name = j["adapter"].get<std::string>();
    }
    return run_generation(adapter_name, ids, params);
}

HandlerResult ModelService::run_generation(const std::string& adapter_name,
                                           const std::vector<std::uint32_t>& prompt_ids,
                                           const GenerationParams& params) {
    Registered* reg = nullptr;
    std::function<void()> hook;
    {
        std::lock_guard<std::mutex> lk(mu_);
        if (in_flight_ >= options_.max_parallel_generations)
            return error_result(503, "overloaded", "all generation slots are busy");
        if (!adapter_name.empty()) {
            auto it = registry_.find(adapter_name);
            if (it == registry_.end())
                return error_result(404, "adapter_not_found",
                                    "no adapter named " + adapter_name);
            // Entries are never erased and never replaced while in use, so
            // this pointer stays valid without the lock.
            reg = &it->second;
            ++reg->uses;
        }
        ++in_flight_;
        hook = generate_hook_;
    }
    struct Release {
        ModelService* s;
        Registered* reg;
        ~Release() {
            std::lock_guard<std::mutex> lk(s->mu_);
            --s->in_flight_;
            if (reg) --reg->uses;
        }
    } release{this, reg};

    if (hook) hook();

    try {
        std::vector<std::uint32_t> out =
            reg ? engine_->generate_with(reg->adapter, prompt_ids, params)
                : engine_->generate(prompt_ids, params);
        nlohmann::json resp;
        resp["tokens"] = out;
        resp["text"] = tokenizer_.decode(out).text;
        resp["model_id"] = engine_->config().model_id;
        resp["usage"] = {{"prompt_tokens", prompt_ids.size()},
                         {"completion_tokens", out.size()}};
        return {200, resp.dump()};
    } catch (const Error& e) {
        switch (e.code()) {
        case ErrorCode::ContextOverflow:
            return error_result(422, "context_overflow", e.what());
        case ErrorCode::TokenOutOfRange:
        case ErrorCode::EmptyPrompt:
            return error_result(400, "bad_request", e.what());
        default:
            return error_result(500, "internal", e.what());
        }
    }
}

HandlerResult ModelService::handle_load_adapter(const std::string& body) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        ++requests_served_;
    }
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        return error_result(400, "bad_request", "body is not a JSON object");
    if (!j.contains("name") || !j["name"].is_string() ||
        j["name"].get<std::string>().empty())
        return error_result(400, "bad_request", "body needs a non-empty adapter name");
    std::string name = j["name"].get<std::string>();

    std::string bytes;
    if (j.contains("payload_b64")) {
        if (!j["payload_b64"].is_string())
            return error_result(400, "bad_request", "payload_b64 must be a string");
        auto decoded = detail::base64_decode(j["payload_b64"].get<std::string>());
        if (!decoded) return error_result(400, "bad_request", "payload_b64 is not valid base64");
        bytes = std::move(*decoded);
    } else if (j.contains("path")) {
        if (!j["path"].is_string())
            return error_result(400, "bad_request", "path must be a string");
        try {
            bytes = detail::read_file_bytes(j["path"].get<std::string>());
        } catch (const Error& e) {
            return error_result(400, "bad_request", e.what());
        }
    } else {
        return error_result(400, "bad_request", "body needs payload_b64 or path");
    }

    if (bytes.size() > options_.max_adapter_bytes)
        return error_result(413, "payload_too_large",
                            "payload is " + std::to_string(bytes.size()) +
                                " bytes, cap is " +
                                std::to_string(options_.max_adapter_bytes));

    Adapter adapter;
    try {
        adapter = parse_adapter(bytes, engine_->config());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigMismatch)
            return error_result(400, "config_mismatch", e.what());
        return error_result(400, "bad_request", e.what());
    }

    bool replaced = false;
    {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = registry_.find(name);
        if (it != registry_.end()) {
            if (it->second.bytes != bytes) {
                if (it->second.uses > 0)
                    return error_result(409, "adapter_active",
                                        "adapter " + name + " is serving a request");
                it->second.adapter = std::move(adapter);
                it->second.bytes = bytes;
                replaced = true;
            }
            // Identical payload: keep the registration as-is.
        } else {
            registry_.emplace(name, Registered{std::move(adapter), bytes, 0});
        }
    }

    nlohmann::json resp;
    resp["name"] = name;
    resp["size_bytes"] = bytes.size();
    resp["replaced"] = replaced;
    return {200, resp.dump()};
}

HandlerResult ModelService::handle_health() const {
    nlohmann::json j;
    j["status"] = "ok";
    j["model_id"] = engine_->config().model_id; // config never mutates; no engine lock
    j["uptime_s"] = std::chrono::duration_cast<std::chrono::seconds>(
                        std::chrono::steady_clock::now() - start_time_)
                        .count();
    {
        std::lock_guard<std::mutex> lk(mu_);
        j["queue_depth"] = in_flight_;
        j["requests_served"] = requests_served_;
    }
    return {200, j.dump()};
}

HandlerResult ModelService::handle_models() const {
    nlohmann::json list = nlohmann::json::array();
    nlohmann::json base;
    base["id"] = engine_->config().model_id;
    base["type"] = "checkpoint";
    list.push_back(base);
    {
        std::lock_guard<std::mutex> lk(mu_);
        for (const auto& [name, reg] : registry_) {
            nlohmann::json a;
            a["id"] = name;
            a["type"] = "adapter";
            a["size_bytes"] = reg.bytes.size();
            list.push_back(a);
        }
    }
    return {200, list.dump()};
}

void ModelService::set_generate_hook(std::function<void()> hook) {
    std::lock_guard<std::mutex> lk(mu_);
    generate_hook_ = std::move(hook);
}

std::size_t ModelService::adapter_count() const {
    std::lock_guard<std::mutex> lk(mu_);
    return registry_.size();
}

struct HttpServer::Impl {
    std::shared_ptr<ModelService> service;
    httplib::Server server;
    std::thread thread;
};

HttpServer::HttpServer(std::shared_ptr<ModelService> service) : impl_(new Impl) {
    if (!service) raise(ErrorCode::InvalidConfig, "http server needs a service");
    impl_->service = std::move(service);

    auto send = [](const HandlerResult& r, httplib::Response& res) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    httplib::Server& s = impl_->server;
    std::shared_ptr<ModelService> svc = impl_->service;
    s.Post("/v1/generate", [svc, send](const httplib::Request& req, httplib::Response& res) {
        send(svc->handle_generate(req.body), res);
    });
    s.Post("/v1/adapters", [svc, send](const httplib::Request& req, httplib::Response& res) {
        send(svc->handle_load_adapter(req.body), res);
    });
    s.Get("/v1/health", [svc, send](const httplib::Request&, httplib::Response& res) {
        send(svc->handle_health(), res);
    });
    s.Get("/v1/models", [svc, send](const httplib::Request&, httplib::Response& res) {
        send(svc->handle_models(), res);
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    if (impl_->thread.joinable()) raise(ErrorCode::Io, "server is already running");
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound <= 0) raise(ErrorCode::Io, "cannot bind a port on " + host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        raise(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void HttpServer::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace unilm
