// SPDX-License-Identifier: MIT
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "io_util.hpp"
#include "unilm/model.hpp"

namespace unilm {

namespace {

constexpr char kMagic[4] = {'U', 'N', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    // Serialization is intentionally permissive: whatever tensors the map
    // holds are written, in name order, so corrupt files can be produced on
    // purpose. load_checkpoint is where shape enforcement lives.
    detail::ByteWriter w;
    w.bytes(std::string(kMagic, 4));
    w.u32(kVersion);

    std::string cfg = detail::model_config_to_json(ckpt.config).dump();
    w.u64(cfg.size());
    w.bytes(cfg);

    if (ckpt.tensors.size() > std::numeric_limits<std::uint32_t>::max())
        raise(ErrorCode::Io, "too many tensors for container");
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));

    // Offsets are relative to the start of the data section, which begins
    // immediately after the tensor table.
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            raise(ErrorCode::Io, "tensor name too long: " + name);
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        for (std::size_t d : t.shape) w.u64(d);
        w.u64(offset);
        offset += static_cast<std::uint64_t>(t.data.size()) * 4;
    }
    for (const auto& [name, t] : ckpt.tensors) {
        (void)name;
        for (float v : t.data) w.f32(v);
    }
    detail::write_file_bytes(path, w.buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes, ErrorCode::MalformedContainer);

    if (r.bytes(4) != std::string(kMagic, 4))
        raise(ErrorCode::MalformedContainer, "bad magic, not a model container");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        raise(ErrorCode::UnsupportedVersion,
              "container version " + std::to_string(version) + " not supported");

    std::uint64_t cfg_len = r.u64();
    if (cfg_len > r.remaining())
        raise(ErrorCode::MalformedContainer, "file truncated");
    nlohmann::json j = nlohmann::json::parse(r.bytes(cfg_len), nullptr, false);
    if (j.is_discarded())
        raise(ErrorCode::MalformedContainer, "config is not valid JSON");

    Checkpoint ckpt;
    ckpt.config = detail::model_config_from_json(j, ErrorCode::MalformedContainer);
    try {
        ckpt.config.validate();
    } catch (const Error& e) {
        raise(ErrorCode::MalformedContainer, std::string("invalid config: ") + e.what());
    }

    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
        std::uint64_t numel;
    };
    std::uint32_t count = r.u32();
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.name = r.bytes(r.u16());
        std::uint8_t rank = r.u8();
        e.numel = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            std::uint64_t dim = r.u64();
            if (dim != 0 && e.numel > std::numeric_limits<std::uint64_t>::max() / dim)
                raise(ErrorCode::MalformedContainer, "tensor dims overflow: " + e.name);
            e.numel *= dim;
            e.shape.push_back(dim);
        }
        e.offset = r.u64();
        entries.push_back(std::move(e));
    }

    std::uint64_t data_size = r.remaining();
    for (const auto& e : entries) {
        std::uint64_t len = e.numel * 4;
        if (e.numel > std::numeric_limits<std::uint64_t>::max() / 4 || e.offset > data_size ||
            len > data_size - e.offset)
            raise(ErrorCode::MalformedContainer, "tensor data out of bounds: " + e.name);
    }

    std::size_t data_base = r.pos();
    for (auto& e : entries) {
        if (ckpt.tensors.count(e.name))
            raise(ErrorCode::MalformedContainer, "duplicate tensor: " + e.name);
        Tensor t = Tensor::zeros(e.shape);
        detail::ByteReader dr(bytes, ErrorCode::MalformedContainer);
        dr.skip(data_base + e.offset);
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = dr.f32();
        ckpt.tensors.emplace(std::move(e.name), std::move(t));
    }

    validate_checkpoint(ckpt);
    return ckpt;
}

} // namespace unilm
