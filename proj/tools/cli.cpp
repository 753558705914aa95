// SPDX-License-Identifier: MIT
#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "unilm/adapter.hpp"
#include "unilm/engine.hpp"
#include "unilm/error.hpp"
#include "unilm/model.hpp"
#include "unilm/orchestrator.hpp"
#include "unilm/quant.hpp"
#include "unilm/server.hpp"
#include "unilm/tokenizer.hpp"

namespace unilm::cli {

namespace {

using nlohmann::json;

struct Ctx {
    std::ostream& out;
    std::ostream& err;
    std::istream& in;
};

std::uint64_t now_ms() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

std::string slurp_stream(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::Io, "cannot open for reading: " + path);
    return slurp_stream(in);
}

// "97,98 99" -> {97, 98, 99}
std::vector<std::uint32_t> parse_id_list(const std::string& text) {
    std::vector<std::uint32_t> ids;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        try {
            unsigned long v = std::stoul(cur);
            if (v > 0xFFFFFFFFul) throw std::out_of_range("id");
            ids.push_back(static_cast<std::uint32_t>(v));
        } catch (const std::exception&) {
            raise(ErrorCode::InvalidConfig, "not a token id: " + cur);
        }
        cur.clear();
    };
    for (char c : text) {
        if (c == ',' || c == ' ' || c == '\t' || c == '\n') {
            flush();
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return ids;
}

Tokenizer tokenizer_or_fallback(const std::string& path) {
    return path.empty() ? Tokenizer::byte_fallback() : Tokenizer::load(path);
}

std::string normalize_endpoint(const std::string& e) {
    return e.find("://") == std::string::npos ? "http://" + e : e;
}

// Generation parameter flags shared by generate, ppl, and route-explain.
struct ParamFlags {
    std::size_t max_new_tokens = 16;
    double temperature = 0.0;
    std::size_t top_k = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> stop_ids;

    GenerationParams to_params() const {
        GenerationParams p;
        p.max_new_tokens = max_new_tokens;
        p.temperature = static_cast<float>(temperature);
        p.top_k = top_k;
        p.seed = seed;
        p.stop_ids = stop_ids;
        return p;
    }
};

void add_param_flags(CLI::App* cmd, ParamFlags& p) {
    cmd->add_option("--max-new-tokens", p.max_new_tokens, "New tokens to decode")
        ->capture_default_str();
    cmd->add_option("--temperature", p.temperature, "0 decodes greedily")
        ->capture_default_str();
    cmd->add_option("--top-k", p.top_k, "Sample from the k best (0 = unlimited)")
        ->capture_default_str();
    cmd->add_option("--seed", p.seed, "Sampling seed")->capture_default_str();
    cmd->add_option("--stop-id", p.stop_ids, "Stop token id (repeatable)");
}

// Model config + optional weights, from either a preset name or a container.
struct ModelSource {
    std::string preset;
    std::string path;

    void add_flags(CLI::App* cmd, bool preset_allowed) {
        CLI::Option* model = cmd->add_option("--model", path, "Model container (.unlm)");
        if (preset_allowed) {
            cmd->add_option("--preset", preset, "Named preset instead of a container")
                ->check(CLI::IsMember({"toy", "slim34m", "manyak"}))
                ->excludes(model);
        } else {
            model->required();
        }
    }

    ModelConfig config() const {
        if (!preset.empty()) return config_for_preset(preset);
        if (path.empty())
            raise(ErrorCode::InvalidConfig, "need --model or --preset");
        return load_checkpoint(path).config;
    }
};

RoutingPolicy policy_from_flag(const std::string& policy_path) {
    if (policy_path.empty()) return RoutingPolicy{};
    return policy_from_json(slurp_file(policy_path));
}

json decision_to_json(const RouteDecision& d) {
    json j;
    j["route"] = to_string(d.route);
    j["reasons"] = d.reasons;
    j["degraded"] = d.degraded;
    return j;
}

void print_response(Ctx& ctx, bool as_json, const GenerationResponse& resp) {
    if (as_json) {
        json j;
        j["tokens"] = resp.tokens;
        j["text"] = resp.text;
        j["model_id"] = resp.model_id;
        j["route"] = to_string(resp.route);
        j["degraded"] = resp.degraded;
        j["timing_ms"] = resp.timing_ms;
        ctx.out << j.dump() << "\n";
    } else {
        ctx.out << resp.text << "\n";
        ctx.err << "[" << to_string(resp.route) << " " << resp.model_id
                << (resp.degraded ? " degraded" : "") << " " << resp.tokens.size()
                << " tokens " << resp.timing_ms << "ms]\n";
    }
}

void register_train_tokenizer(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string corpus, out_path;
        std::size_t vocab_size = 0;
        std::vector<std::string> specials, jsonl_fields;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("train-tokenizer", "Learn a byte-level BPE vocabulary");
    cmd->add_option("--corpus", st->corpus, "Training text, one document per line")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--vocab-size", st->vocab_size, "Target vocabulary size")->required();
    cmd->add_option("--special", st->specials, "Special token (repeatable)");
    cmd->add_option("--jsonl-field", st->jsonl_fields,
                    "Treat the corpus as JSONL and pull these string fields");
    cmd->add_option("--out", st->out_path, "Where to write the tokenizer JSON")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        std::ifstream in(st->corpus);
        if (!in) raise(ErrorCode::Io, "cannot open for reading: " + st->corpus);
        std::vector<std::string> docs;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (st->jsonl_fields.empty()) {
                docs.push_back(line);
                continue;
            }
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                raise(ErrorCode::MalformedFile, "corpus line is not a JSON object");
            for (const auto& field : st->jsonl_fields)
                if (j.contains(field) && j[field].is_string())
                    docs.push_back(j[field].get<std::string>());
        }
        Tokenizer tok = Tokenizer::train_bpe(docs, st->vocab_size, st->specials);
        tok.save(st->out_path);
        if (st->as_json) {
            json j;
            j["vocab_size"] = tok.vocab_size();
            j["merges"] = tok.merges().size();
            j["exhausted"] = tok.train_exhausted();
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << "trained " << tok.vocab_size() << " tokens ("
                    << tok.merges().size() << " merges"
                    << (tok.train_exhausted() ? ", corpus exhausted" : "") << ") -> "
                    << st->out_path << "\n";
        }
    });
}

void register_merge_tokenizer(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string base, extension, out_path;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("merge-tokenizer", "Merge an extension vocabulary into a base");
    cmd->add_option("--base", st->base, "Base tokenizer JSON")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--extension", st->extension, "Extension tokenizer JSON")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", st->out_path, "Where to write the merged tokenizer")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        auto [merged, report] =
            merge_tokenizers(Tokenizer::load(st->base), Tokenizer::load(st->extension));
        merged.save(st->out_path);
        if (st->as_json) {
            json j;
            j["base_size"] = report.base_size;
            j["extension_size"] = report.extension_size;
            j["merged_size"] = report.merged_size;
            j["duplicates_dropped"] = report.duplicates_dropped;
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << "merged " << report.base_size << " + " << report.extension_size
                    << " -> " << report.merged_size << " tokens ("
                    << report.duplicates_dropped << " duplicates dropped) -> "
                    << st->out_path << "\n";
        }
    });
}

void register_tokenize(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string tokenizer, text;
        bool text_set = false;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("tokenize", "Encode text into token ids");
    cmd->add_option("--tokenizer", st->tokenizer,
                    "Tokenizer JSON (byte fallback when absent)");
    cmd->add_option("--text", st->text, "Text to encode (stdin when absent)")
        ->trigger_on_parse(); // distinguishes an explicit empty string from no flag
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    CLI::Option* text_opt = cmd->get_option("--text");
    cmd->callback([st, text_opt, &ctx] {
        std::string text = text_opt->count() ? st->text : slurp_stream(ctx.in);
        std::vector<std::uint32_t> ids = tokenizer_or_fallback(st->tokenizer).encode(text);
        if (st->as_json) {
            ctx.out << json(ids).dump() << "\n";
        } else {
            for (std::size_t i = 0; i < ids.size(); ++i)
                ctx.out << ids[i] << (i + 1 < ids.size() ? " " : "");
            ctx.out << "\n";
        }
    });
}

void register_detokenize(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string tokenizer, ids;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("detokenize", "Decode token ids into text");
    cmd->add_option("--tokenizer", st->tokenizer,
                    "Tokenizer JSON (byte fallback when absent)");
    cmd->add_option("--ids", st->ids, "Token ids, comma or space separated")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        DecodeResult r =
            tokenizer_or_fallback(st->tokenizer).decode(parse_id_list(st->ids));
        if (st->as_json) {
            json j;
            j["text"] = r.text;
            j["replaced_invalid_utf8"] = r.replaced_invalid_utf8;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << r.text << "\n";
        }
    });
}

void register_init_checkpoint(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string preset, out_path;
        std::uint64_t seed = 0;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("init-checkpoint",
                                       "Write a seeded random checkpoint for a preset");
    cmd->add_option("--preset", st->preset, "toy | slim34m | manyak")
        ->required()
        ->check(CLI::IsMember({"toy", "slim34m", "manyak"}));
    cmd->add_option("--seed", st->seed, "Init seed")->capture_default_str();
    cmd->add_option("--out", st->out_path, "Where to write the container")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        ModelConfig config = config_for_preset(st->preset);
        save_checkpoint(init_checkpoint(config, st->seed), st->out_path);
        if (st->as_json) {
            json j;
            j["model_id"] = config.model_id;
            j["parameters"] = count_parameters(config);
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << config.model_id << ": " << count_parameters(config)
                    << " parameters -> " << st->out_path << "\n";
        }
    });
}

void register_extend_embeddings(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model, mode = "mean", out_path;
        std::size_t new_vocab = 0;
        double sigma = 0.02;
        std::uint64_t seed = 0;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("extend-embeddings",
                                       "Grow the vocabulary rows of a checkpoint");
    cmd->add_option("--model", st->model, "Model container (.unlm)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--new-vocab", st->new_vocab, "Target vocabulary size")->required();
    cmd->add_option("--mode", st->mode, "mean | gaussian")
        ->check(CLI::IsMember({"mean", "gaussian"}))
        ->capture_default_str();
    cmd->add_option("--sigma", st->sigma, "Gaussian stddev")->capture_default_str();
    cmd->add_option("--seed", st->seed, "Gaussian seed")->capture_default_str();
    cmd->add_option("--out", st->out_path, "Where to write the result")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        Checkpoint ckpt = load_checkpoint(st->model);
        std::size_t old_vocab = ckpt.config.vocab_size;
        EmbeddingInit init = st->mode == "mean"
                                 ? EmbeddingInit::mean()
                                 : EmbeddingInit::gaussian(static_cast<float>(st->sigma),
                                                           st->seed);
        Checkpoint grown = extend_embeddings(ckpt, st->new_vocab, init);
        save_checkpoint(grown, st->out_path);
        if (st->as_json) {
            json j;
            j["old_vocab"] = old_vocab;
            j["new_vocab"] = grown.config.vocab_size;
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << "vocabulary " << old_vocab << " -> " << grown.config.vocab_size
                    << " -> " << st->out_path << "\n";
        }
    });
}

void register_quantize(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model, out_path;
        std::size_t group_size = 64;
        double target_bits = 3.5;
        bool include_embeddings = false;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("quantize", "Palettize a checkpoint into a weight bundle");
    cmd->add_option("--model", st->model, "Model container (.unlm)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--group-size", st->group_size, "Weights per palette group")
        ->capture_default_str();
    cmd->add_option("--target-bits", st->target_bits, "Average bits per weight, in [2, 4]")
        ->capture_default_str();
    cmd->add_flag("--include-embeddings", st->include_embeddings,
                  "Palettize the embedding table too");
    cmd->add_option("--out", st->out_path, "Where to write the bundle")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        ModelQuantOptions opts;
        opts.group_size = st->group_size;
        opts.target_avg_bits = st->target_bits;
        opts.include_embeddings = st->include_embeddings;
        QuantizedModel qm = quantize_model(load_checkpoint(st->model), opts);
        save_quantized_model(qm, st->out_path);
        if (st->as_json) {
            json j;
            j["avg_bits"] = average_bits(qm);
            j["palettized_tensors"] = qm.palettized.size();
            j["raw_tensors"] = qm.raw.size();
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << "palettized " << qm.palettized.size() << " tensors at "
                    << average_bits(qm) << " bits/weight (" << qm.raw.size()
                    << " kept raw) -> " << st->out_path << "\n";
        }
    });
}

void register_dequantize(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model, out_path;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("dequantize", "Expand a weight bundle back to a checkpoint");
    cmd->add_option("--model", st->model, "Weight bundle (.unlb)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", st->out_path, "Where to write the container")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        Checkpoint ckpt = dequantize_model(load_quantized_model(st->model));
        save_checkpoint(ckpt, st->out_path);
        if (st->as_json) {
            json j;
            j["model_id"] = ckpt.config.model_id;
            j["tensors"] = ckpt.tensors.size();
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << ckpt.config.model_id << ": " << ckpt.tensors.size()
                    << " tensors -> " << st->out_path << "\n";
        }
    });
}

json config_to_json_view(const ModelConfig& c) {
    json j;
    j["model_id"] = c.model_id;
    j["vocab_size"] = c.vocab_size;
    j["hidden_size"] = c.hidden_size;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["n_kv_heads"] = c.n_kv_heads;
    j["intermediate_size"] = c.intermediate_size;
    j["max_seq_len"] = c.max_seq_len;
    return j;
}

void register_inspect(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("inspect", "Describe a checkpoint or weight bundle");
    cmd->add_option("--model", st->model, "Container (.unlm) or bundle (.unlb)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        std::ifstream f(st->model, std::ios::binary);
        char magic[4] = {0, 0, 0, 0};
        f.read(magic, 4);
        std::string m(magic, 4);
        if (m == "UNLM") {
            Checkpoint ckpt = load_checkpoint(st->model);
            if (st->as_json) {
                json j;
                j["kind"] = "checkpoint";
                j["config"] = config_to_json_view(ckpt.config);
                j["tensors"] = ckpt.tensors.size();
                j["parameters"] = count_parameters(ckpt.config);
                ctx.out << j.dump() << "\n";
            } else {
                ctx.out << "checkpoint " << ckpt.config.model_id << ": "
                        << count_parameters(ckpt.config) << " parameters in "
                        << ckpt.tensors.size() << " tensors\n";
            }
        } else if (m == "UNLB") {
            QuantizedModel qm = load_quantized_model(st->model);
            if (st->as_json) {
                json j;
                j["kind"] = "quantized_model";
                j["config"] = config_to_json_view(qm.config);
                j["group_size"] = qm.options.group_size;
                j["target_avg_bits"] = qm.options.target_avg_bits;
                j["avg_bits"] = average_bits(qm);
                j["palettized_tensors"] = qm.palettized.size();
                j["raw_tensors"] = qm.raw.size();
                ctx.out << j.dump() << "\n";
            } else {
                ctx.out << "quantized " << qm.config.model_id << ": "
                        << average_bits(qm) << " bits/weight over "
                        << qm.palettized.size() << " palettized tensors ("
                        << qm.raw.size() << " raw)\n";
            }
        } else {
            raise(ErrorCode::MalformedFile,
                  "not a model container or weight bundle: " + st->model);
        }
    });
}

void register_generate(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model, tokenizer, prompt, ids, mode = "local";
        std::string task = "chat", privacy = "default", adapter, endpoint, policy;
        ParamFlags params;
        bool interactive = false;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("generate", "Decode a completion for a prompt");
    cmd->add_option("--model", st->model, "Local model container (.unlm)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--tokenizer", st->tokenizer,
                    "Tokenizer JSON (byte fallback when absent)");
    CLI::Option* prompt_opt = cmd->add_option("--prompt", st->prompt, "Prompt text");
    cmd->add_option("--ids", st->ids, "Prompt token ids instead of text")
        ->excludes(prompt_opt);
    add_param_flags(cmd, st->params);
    cmd->add_option("--mode", st->mode, "local | remote | auto")
        ->check(CLI::IsMember({"local", "remote", "auto"}))
        ->capture_default_str();
    cmd->add_option("--task", st->task, "chat | translate | summarize | qa | other")
        ->capture_default_str();
    cmd->add_option("--privacy", st->privacy, "strict | default")
        ->check(CLI::IsMember({"strict", "default"}))
        ->capture_default_str();
    cmd->add_option("--adapter", st->adapter, "Adapter name on the remote");
    cmd->add_option("--endpoint", st->endpoint, "Remote server (host:port)")
        ->envname("UNILM_SERVER");
    cmd->add_option("--policy", st->policy, "Routing policy JSON file")
        ->check(CLI::ExistingFile);
    cmd->add_flag("--interactive", st->interactive,
                  "REPL: read a prompt per line, print its completion");
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        GenerationParams params = st->params.to_params();
        Tokenizer tokenizer = tokenizer_or_fallback(st->tokenizer);

        std::shared_ptr<Engine> engine;
        if (st->mode != "remote") {
            if (st->model.empty())
                raise(ErrorCode::InvalidConfig, st->mode + " mode needs --model");
            engine = std::make_shared<Engine>(load_checkpoint(st->model));
        }
        std::shared_ptr<RemoteClient> remote;
        if (!st->endpoint.empty()) remote = make_http_remote_client(st->endpoint);
        if (st->mode == "remote" && !remote)
            raise(ErrorCode::InvalidConfig, "remote mode needs --endpoint or UNILM_SERVER");

        std::optional<Orchestrator> orch;
        if (st->mode == "auto")
            orch.emplace(engine, tokenizer, policy_from_flag(st->policy), remote);

        auto run_one = [&](const std::string& prompt_text,
                           const std::optional<std::vector<std::uint32_t>>& prompt_ids) {
            GenerationResponse resp;
            std::uint64_t t0 = now_ms();
            if (st->mode == "local") {
                std::vector<std::uint32_t> in_ids =
                    prompt_ids ? *prompt_ids : tokenizer.encode(prompt_text);
                resp.tokens = engine->generate(in_ids, params);
                resp.text = tokenizer.decode(resp.tokens).text;
                resp.model_id = engine->config().model_id;
                resp.route = Route::Local;
                resp.timing_ms = now_ms() - t0;
            } else if (st->mode == "remote") {
                json body;
                if (prompt_ids) {
                    body["tokens"] = *prompt_ids;
                } else {
                    body["prompt"] = prompt_text; // the server tokenizes
                }
                body["max_new_tokens"] = params.max_new_tokens;
                body["temperature"] = params.temperature;
                body["top_k"] = params.top_k;
                body["seed"] = params.seed;
                if (!params.stop_ids.empty()) body["stop_ids"] = params.stop_ids;
                if (!st->adapter.empty()) body["adapter"] = st->adapter;
                RemoteResult rr = remote->generate(body.dump());
                if (rr.status == 0)
                    raise(ErrorCode::RemoteProtocolError, "cannot reach " + st->endpoint);
                json j = json::parse(rr.body, nullptr, false);
                if (rr.status != 200) {
                    std::string detail = rr.body;
                    if (!j.is_discarded() && j.is_object() && j.contains("detail"))
                        detail = j["detail"].get<std::string>();
                    raise(ErrorCode::RemoteProtocolError,
                          "server returned " + std::to_string(rr.status) + ": " + detail);
                }
                if (j.is_discarded() || !j.contains("tokens") || !j.contains("model_id"))
                    raise(ErrorCode::RemoteProtocolError, "malformed server response");
                resp.tokens = j["tokens"].get<std::vector<std::uint32_t>>();
                resp.text = j.value("text", "");
                resp.model_id = j["model_id"].get<std::string>();
                resp.route = Route::Remote;
                resp.timing_ms = now_ms() - t0;
            } else {
                GenerationRequest req;
                req.prompt_text = prompt_text;
                req.prompt_ids = prompt_ids;
                req.params = params;
                req.task_class = task_class_from_string(st->task);
                req.privacy =
                    st->privacy == "strict" ? Privacy::Strict : Privacy::Default;
                req.adapter_name = st->adapter;
                resp = orch->execute(req);
            }
            print_response(ctx, st->as_json, resp);
        };

        if (st->interactive) {
            std::string line;
            while (std::getline(ctx.in, line)) {
                if (line.empty()) continue;
                run_one(line, std::nullopt);
            }
            return;
        }
        if (!st->ids.empty()) {
            run_one("", parse_id_list(st->ids));
        } else if (!st->prompt.empty()) {
            run_one(st->prompt, std::nullopt);
        } else {
            raise(ErrorCode::InvalidConfig, "need --prompt, --ids, or --interactive");
        }
    });
}

void register_ppl(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model, tokenizer, text, ids, file;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("ppl", "Perplexity of a token sequence");
    cmd->add_option("--model", st->model, "Model container (.unlm)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--tokenizer", st->tokenizer,
                    "Tokenizer JSON (byte fallback when absent)");
    CLI::Option* text_opt = cmd->add_option("--text", st->text, "Text to score");
    CLI::Option* ids_opt =
        cmd->add_option("--ids", st->ids, "Token ids to score")->excludes(text_opt);
    cmd->add_option("--file", st->file, "Score the contents of a file")
        ->excludes(text_opt)
        ->excludes(ids_opt)
        ->check(CLI::ExistingFile);
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        std::vector<std::uint32_t> ids;
        if (!st->ids.empty()) {
            ids = parse_id_list(st->ids);
        } else {
            std::string text = !st->file.empty() ? slurp_file(st->file) : st->text;
            if (text.empty())
                raise(ErrorCode::InvalidConfig, "need --text, --ids, or --file");
            ids = tokenizer_or_fallback(st->tokenizer).encode(text);
        }
        Engine engine(load_checkpoint(st->model));
        double ppl = engine.perplexity(ids);
        if (st->as_json) {
            json j;
            j["perplexity"] = ppl;
            j["tokens"] = ids.size();
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << "perplexity " << ppl << " over " << ids.size() << " tokens\n";
        }
    });
}

void register_serve(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string model, tokenizer, host = "127.0.0.1";
        int port = 8080;
        std::size_t workers = 4;
        std::size_t max_adapter_mb = 128;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand("serve", "Serve a checkpoint over HTTP");
    cmd->add_option("--model", st->model, "Model container (.unlm)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--tokenizer", st->tokenizer,
                    "Tokenizer JSON (byte fallback when absent)");
    cmd->add_option("--host", st->host, "Listen address")->capture_default_str();
    cmd->add_option("--port", st->port, "Listen port (0 picks a free one)")
        ->capture_default_str();
    cmd->add_option("--workers", st->workers, "Parallel generation slots")
        ->capture_default_str();
    cmd->add_option("--max-adapter-mb", st->max_adapter_mb, "Adapter payload cap")
        ->capture_default_str();
    cmd->callback([st, &ctx] {
        ServiceOptions opts;
        opts.max_parallel_generations = st->workers;
        opts.max_adapter_bytes = st->max_adapter_mb * 1024 * 1024;
        auto engine = std::make_shared<Engine>(load_checkpoint(st->model));
        auto service = std::make_shared<ModelService>(
            engine, tokenizer_or_fallback(st->tokenizer), opts);
        HttpServer server(service);
        int port = server.start(st->host, st->port);
        ctx.out << "listening on http://" << st->host << ":" << port << "\n";
        ctx.out << "model: " << engine->config().model_id << "\n";
        ctx.out << "serving until stdin closes (Ctrl-D to stop)\n";
        ctx.out.flush();
        std::string line;
        while (std::getline(ctx.in, line)) {
        }
        server.stop();
    });
}

void register_route_explain(CLI::App& app, Ctx& ctx) {
    struct St {
        ModelSource source;
        std::string tokenizer, prompt, ids;
        std::string task = "chat", privacy = "default", endpoint, policy;
        ParamFlags params;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd = app.add_subcommand(
        "route-explain", "Print the routing verdict for a request without running it");
    st->source.add_flags(cmd, true);
    cmd->add_option("--tokenizer", st->tokenizer,
                    "Tokenizer JSON (byte fallback when absent)");
    CLI::Option* prompt_opt = cmd->add_option("--prompt", st->prompt, "Prompt text");
    cmd->add_option("--ids", st->ids, "Prompt token ids instead of text")
        ->excludes(prompt_opt);
    cmd->add_option("--task", st->task, "chat | translate | summarize | qa | other")
        ->capture_default_str();
    cmd->add_option("--privacy", st->privacy, "strict | default")
        ->check(CLI::IsMember({"strict", "default"}))
        ->capture_default_str();
    cmd->add_option("--endpoint", st->endpoint, "Remote server to probe")
        ->envname("UNILM_SERVER");
    cmd->add_option("--policy", st->policy, "Routing policy JSON file")
        ->check(CLI::ExistingFile);
    add_param_flags(cmd, st->params);
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        GenerationRequest req;
        req.params = st->params.to_params();
        req.task_class = task_class_from_string(st->task);
        req.privacy = st->privacy == "strict" ? Privacy::Strict : Privacy::Default;
        if (!st->ids.empty()) {
            req.prompt_ids = parse_id_list(st->ids);
        } else {
            req.prompt_ids = tokenizer_or_fallback(st->tokenizer).encode(st->prompt);
        }
        std::uint64_t now = now_ms();
        ServerHealth health;
        health.probed_at_ms = now;
        if (!st->endpoint.empty()) {
            health = probe_server(st->endpoint);
            health.probed_at_ms = now;
        }
        RouteDecision d = decide_route(req, policy_from_flag(st->policy),
                                       st->source.config(), health, now);
        if (st->as_json) {
            ctx.out << decision_to_json(d).dump() << "\n";
        } else {
            ctx.out << "route: " << to_string(d.route) << "\n";
            ctx.out << "reasons:";
            for (const auto& r : d.reasons) ctx.out << " " << r;
            ctx.out << "\n";
            ctx.out << "degraded: " << (d.degraded ? "true" : "false") << "\n";
        }
    });
}

void register_adapter_init(CLI::App& app, Ctx& ctx) {
    struct St {
        ModelSource source;
        std::string name, out_path;
        std::size_t rank = 16;
        double alpha = 16.0;
        std::vector<std::string> targets;
        std::uint64_t seed = 0;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("adapter-init", "Write a freshly initialized adapter");
    st->source.add_flags(cmd, true);
    cmd->add_option("--name", st->name, "Adapter name")->required();
    cmd->add_option("--rank", st->rank, "Low-rank width")->capture_default_str();
    cmd->add_option("--alpha", st->alpha, "Delta scale numerator")->capture_default_str();
    cmd->add_option("--target", st->targets,
                    "Projection to hook, repeatable (default wq wk wv wo)");
    cmd->add_option("--seed", st->seed, "Init seed")->capture_default_str();
    cmd->add_option("--out", st->out_path, "Where to write the adapter")->required();
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        AdapterConfig cfg;
        cfg.name = st->name;
        cfg.rank = st->rank;
        cfg.alpha = static_cast<float>(st->alpha);
        if (!st->targets.empty()) cfg.targets = st->targets;
        ModelConfig model = st->source.config();
        save_adapter(init_adapter(model, cfg, st->seed), st->out_path);
        std::size_t bytes = adapter_size_bytes(model, cfg);
        if (st->as_json) {
            json j;
            j["name"] = cfg.name;
            j["rank"] = cfg.rank;
            j["payload_bytes"] = bytes;
            j["out"] = st->out_path;
            ctx.out << j.dump() << "\n";
        } else {
            ctx.out << cfg.name << ": rank " << cfg.rank << ", " << bytes
                    << " payload bytes -> " << st->out_path << "\n";
        }
    });
}

void register_adapter_load(CLI::App& app, Ctx& ctx) {
    struct St {
        std::string endpoint, name, file, server_path;
        bool as_json = false;
    };
    auto st = std::make_shared<St>();
    CLI::App* cmd =
        app.add_subcommand("adapter-load", "Register an adapter on a running server");
    cmd->add_option("--endpoint", st->endpoint, "Server (host:port)")
        ->envname("UNILM_SERVER")
        ->required();
    cmd->add_option("--name", st->name, "Name to register under")->required();
    CLI::Option* file_opt =
        cmd->add_option("--file", st->file, "Adapter file to upload")
            ->check(CLI::ExistingFile);
    cmd->add_option("--server-path", st->server_path,
                    "Path the server should read instead of an upload")
        ->excludes(file_opt);
    cmd->add_flag("--json", st->as_json, "Machine-readable output");
    cmd->callback([st, &ctx] {
        json body;
        body["name"] = st->name;
        if (!st->file.empty()) {
            std::string bytes = slurp_file(st->file);
            static constexpr char alphabet[] =
                "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
            std::string b64;
            std::size_t i = 0;
            for (; i + 3 <= bytes.size(); i += 3) {
                std::uint32_t n = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                                  (static_cast<std::uint8_t>(bytes[i + 1]) << 8) |
                                  static_cast<std::uint8_t>(bytes[i + 2]);
                b64 += alphabet[(n >> 18) & 63];
                b64 += alphabet[(n >> 12) & 63];
                b64 += alphabet[(n >> 6) & 63];
                b64 += alphabet[n & 63];
            }
            if (i + 1 == bytes.size()) {
                std::uint32_t n = static_cast<std::uint8_t>(bytes[i]) << 16;
                b64 += alphabet[(n >> 18) & 63];
                b64 += alphabet[(n >> 12) & 63];
                b64 += "==";
            } else if (i + 2 == bytes.size()) {
                std::uint32_t n = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                                  (static_cast<std::uint8_t>(bytes[i + 1]) << 8);
                b64 += alphabet[(n >> 18) & 63];
                b64 += alphabet[(n >> 12) & 63];
                b64 += alphabet[(n >> 6) & 63];
                b64 += "=";
            }
            body["payload_b64"] = b64;
        } else if (!st->server_path.empty()) {
            body["path"] = st->server_path;
        } else {
            raise(ErrorCode::InvalidConfig, "need --file or --server-path");
        }

        httplib::Client cli(normalize_endpoint(st->endpoint));
        cli.set_connection_timeout(2, 0);
        cli.set_read_timeout(60, 0);
        httplib::Result res = cli.Post("/v1/adapters", body.dump(), "application/json");
        if (!res) raise(ErrorCode::RemoteProtocolError, "cannot reach " + st->endpoint);
        if (res->status != 200) {
            std::string detail = res->body;
            json j = json::parse(res->body, nullptr, false);
            if (!j.is_discarded() && j.is_object() && j.contains("detail"))
                detail = j["detail"].get<std::string>();
            raise(ErrorCode::RemoteProtocolError,
                  "server returned " + std::to_string(res->status) + ": " + detail);
        }
        if (st->as_json) {
            ctx.out << res->body << "\n";
        } else {
            json j = json::parse(res->body);
            ctx.out << "registered " << j["name"].get<std::string>() << " ("
                    << j["size_bytes"].get<std::size_t>() << " bytes"
                    << (j["replaced"].get<bool>() ? ", replaced" : "") << ")\n";
        }
    });
}

} // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err,
            std::istream& in) {
    Ctx ctx{out, err, in};
    CLI::App app{"On-device/server hybrid language model toolkit", "unilm"};
    app.set_version_flag("--version", "unilm 0.1.0");
    app.require_subcommand(1);

    register_train_tokenizer(app, ctx);
    register_merge_tokenizer(app, ctx);
    register_tokenize(app, ctx);
    register_detokenize(app, ctx);
    register_init_checkpoint(app, ctx);
    register_extend_embeddings(app, ctx);
    register_quantize(app, ctx);
    register_dequantize(app, ctx);
    register_inspect(app, ctx);
    register_generate(app, ctx);
    register_ppl(app, ctx);
    register_serve(app, ctx);
    register_route_explain(app, ctx);
    register_adapter_init(app, ctx);
    register_adapter_load(app, ctx);

    try {
        std::reverse(args.begin(), args.end()); // CLI11 consumes from the back
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << " [" << error_code_name(e.code()) << "]\n";
        return error_exit_code(e.code());
    }
    return 0;
}

} // namespace unilm::cli
