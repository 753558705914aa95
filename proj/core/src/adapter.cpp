// SPDX-License-Identifier: MIT
#include "unilm/adapter.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "io_util.hpp"
#include "rng.hpp"

namespace unilm {

namespace {

constexpr char kMagic[4] = {'U', 'N', 'L', 'A'};
constexpr std::uint32_t kVersion = 1;

std::string pair_key(std::size_t layer, const std::string& target) {
    return "layers." + std::to_string(layer) + "." + target;
}

} // namespace

const std::vector<std::string>& adapter_target_names() {
    static const std::vector<std::string> names = {"wq", "wk",     "wv",   "wo",
                                                   "w_gate", "w_up", "w_down"};
    return names;
}

std::pair<std::size_t, std::size_t> projection_dims(const ModelConfig& config,
                                                    const std::string& target) {
    std::size_t h = config.hidden_size;
    std::size_t kvd = config.n_kv_heads * config.head_dim();
    std::size_t f = config.intermediate_size;
    if (target == "wq" || target == "wo") return {h, h};
    if (target == "wk" || target == "wv") return {h, kvd};
    if (target == "w_gate" || target == "w_up") return {h, f};
    if (target == "w_down") return {f, h};
    raise(ErrorCode::InvalidTarget, "unknown projection: " + target);
}

void AdapterConfig::validate() const {
    if (rank == 0) raise(ErrorCode::RankZero, "adapter rank must be at least 1");
    if (targets.empty()) raise(ErrorCode::InvalidTarget, "adapter needs at least one target");
    const auto& known = adapter_target_names();
    std::set<std::string> seen;
    for (const auto& t : targets) {
        if (std::find(known.begin(), known.end(), t) == known.end())
            raise(ErrorCode::InvalidTarget, "unknown projection: " + t);
        if (!seen.insert(t).second)
            raise(ErrorCode::InvalidTarget, "duplicate target: " + t);
    }
}

const LowRankPair* Adapter::find(std::size_t layer, const std::string& target) const {
    auto it = weights.find(pair_key(layer, target));
    return it == weights.end() ? nullptr : &it->second;
}

Adapter init_adapter(const ModelConfig& model, const AdapterConfig& config,
                     std::uint64_t seed) {
    model.validate();
    config.validate();
    Adapter ad;
    ad.config = config;
    ad.n_layers = model.n_layers;
    detail::GaussianRng rng(seed);
    for (std::size_t layer = 0; layer < model.n_layers; ++layer) {
        for (const auto& target : config.targets) {
            auto [in, out] = projection_dims(model, target);
            LowRankPair p{Tensor::zeros({config.rank, in}), Tensor::zeros({out, config.rank})};
            for (float& x : p.a.data) x = static_cast<float>(rng.normal() * 0.02);
            ad.weights.emplace(pair_key(layer, target), std::move(p));
        }
    }
    return ad;
}

std::size_t adapter_size_bytes(const ModelConfig& model, const AdapterConfig& config) {
    model.validate();
    config.validate();
    std::size_t per_layer = 0;
    for (const auto& target : config.targets) {
        auto [in, out] = projection_dims(model, target);
        per_layer += config.rank * in + out * config.rank;
    }
    return model.n_layers * per_layer * 4;
}

void validate_adapter_shapes(const ModelConfig& model, const Adapter& adapter,
                             ErrorCode mismatch) {
    const AdapterConfig& cfg = adapter.config;
    cfg.validate();
    if (adapter.n_layers != model.n_layers)
        raise(mismatch, "adapter covers " + std::to_string(adapter.n_layers) +
                            " layers, model has " + std::to_string(model.n_layers));
    std::size_t expected = 0;
    for (std::size_t layer = 0; layer < adapter.n_layers; ++layer) {
        for (const auto& target : cfg.targets) {
            const LowRankPair* p = adapter.find(layer, target);
            if (!p) raise(mismatch, "adapter missing pair: " + pair_key(layer, target));
            auto [in, out] = projection_dims(model, target);
            std::vector<std::size_t> want_a{cfg.rank, in}, want_b{out, cfg.rank};
            if (p->a.shape != want_a || p->b.shape != want_b)
                raise(mismatch, "adapter pair has wrong shape: " + pair_key(layer, target));
            ++expected;
        }
    }
    if (adapter.weights.size() != expected)
        raise(mismatch, "adapter holds pairs outside its target list");
}

std::string serialize_adapter(const Adapter& adapter) {
    const AdapterConfig& cfg = adapter.config;
    cfg.validate();

    nlohmann::json dims = nlohmann::json::object();
    for (const auto& target : cfg.targets) {
        const LowRankPair* p = adapter.find(0, target);
        if (!p || p->a.rank() != 2 || p->b.rank() != 2)
            raise(ErrorCode::Io, "adapter is missing pairs for its own targets");
        dims[target] = {p->a.shape[1], p->b.shape[0]};
    }
    nlohmann::json header;
    header["name"] = cfg.name;
    header["rank"] = cfg.rank;
    header["alpha"] = cfg.alpha;
    header["targets"] = cfg.targets;
    header["n_layers"] = adapter.n_layers;
    header["dims"] = dims;

    detail::ByteWriter w;
    w.bytes(std::string(kMagic, 4));
    w.u32(kVersion);
    std::string hj = header.dump();
    w.u64(hj.size());
    w.bytes(hj);
    for (std::size_t layer = 0; layer < adapter.n_layers; ++layer) {
        for (const auto& target : cfg.targets) {
            const LowRankPair* p = adapter.find(layer, target);
            if (!p) raise(ErrorCode::Io, "adapter is missing pairs for its own targets");
            for (float v : p->a.data) w.f32(v);
            for (float v : p->b.data) w.f32(v);
        }
    }
    return w.buf;
}

Adapter parse_adapter(const std::string& bytes, const ModelConfig& model) {
    detail::ByteReader r(bytes, ErrorCode::MalformedFile);
    if (r.bytes(4) != std::string(kMagic, 4))
        raise(ErrorCode::MalformedFile, "bad magic, not an adapter file");
    if (r.u32() != kVersion) raise(ErrorCode::MalformedFile, "unsupported adapter version");

    std::uint64_t hlen = r.u64();
    if (hlen > r.remaining()) raise(ErrorCode::MalformedFile, "file truncated");
    nlohmann::json h = nlohmann::json::parse(r.bytes(hlen), nullptr, false);
    if (h.is_discarded()) raise(ErrorCode::MalformedFile, "header is not valid JSON");

    Adapter ad;
    if (!h.contains("name") || !h["name"].is_string() || !h.contains("rank") ||
        !h["rank"].is_number_unsigned() || !h.contains("alpha") || !h["alpha"].is_number() ||
        !h.contains("targets") || !h["targets"].is_array() || !h.contains("n_layers") ||
        !h["n_layers"].is_number_unsigned() || !h.contains("dims") || !h["dims"].is_object())
        raise(ErrorCode::MalformedFile, "header is missing required fields");
    ad.config.name = h["name"].get<std::string>();
    ad.config.rank = h["rank"].get<std::size_t>();
    ad.config.alpha = h["alpha"].get<float>();
    ad.config.targets.clear();
    for (const auto& t : h["targets"]) {
        if (!t.is_string()) raise(ErrorCode::MalformedFile, "targets must be strings");
        ad.config.targets.push_back(t.get<std::string>());
    }
    ad.n_layers = h["n_layers"].get<std::size_t>();
    try {
        ad.config.validate();
    } catch (const Error& e) {
        raise(ErrorCode::MalformedFile, std::string("bad adapter config: ") + e.what());
    }

    std::map<std::string, std::pair<std::size_t, std::size_t>> dims;
    for (const auto& target : ad.config.targets) {
        const auto& d = h["dims"][target];
        if (!d.is_array() || d.size() != 2 || !d[0].is_number_unsigned() ||
            !d[1].is_number_unsigned())
            raise(ErrorCode::MalformedFile, "dims entry missing or malformed: " + target);
        dims[target] = {d[0].get<std::size_t>(), d[1].get<std::size_t>()};
    }

    std::size_t per_layer = 0;
    for (const auto& target : ad.config.targets) {
        auto [in, out] = dims[target];
        per_layer += ad.config.rank * in + out * ad.config.rank;
    }
    std::size_t expected_payload = ad.n_layers * per_layer * 4;
    if (r.remaining() != expected_payload)
        raise(ErrorCode::MalformedFile,
              "payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                  std::to_string(expected_payload));

    for (std::size_t layer = 0; layer < ad.n_layers; ++layer) {
        for (const auto& target : ad.config.targets) {
            auto [in, out] = dims[target];
            LowRankPair p{Tensor::zeros({ad.config.rank, in}),
                          Tensor::zeros({out, ad.config.rank})};
            for (float& x : p.a.data) x = r.f32();
            for (float& x : p.b.data) x = r.f32();
            ad.weights.emplace(pair_key(layer, target), std::move(p));
        }
    }
    r.expect_consumed();

    validate_adapter_shapes(model, ad, ErrorCode::ConfigMismatch);
    return ad;
}

void save_adapter(const Adapter& adapter, const std::string& path) {
    detail::write_file_bytes(path, serialize_adapter(adapter));
}

Adapter load_adapter(const std::string& path, const ModelConfig& model) {
    return parse_adapter(detail::read_file_bytes(path), model);
}

} // namespace unilm
