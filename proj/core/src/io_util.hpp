// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "json.hpp"

#include "unilm/error.hpp"
#include "unilm/model.hpp"

namespace unilm::detail {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::Io, "cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) raise(ErrorCode::Io, "read failed: " + path);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::Io, "cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) raise(ErrorCode::Io, "write failed: " + path);
}

// Little-endian append-only buffer. float is written through its IEEE-754
// bit pattern so files are byte-identical across platforms.
struct ByteWriter {
    std::string buf;

    void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const std::string& s) { buf.append(s); }
};

// Bounds-checked little-endian cursor. Any out-of-range access throws the
// error code the container format reserves for corruption.
class ByteReader {
public:
    ByteReader(const std::string& buf, ErrorCode on_truncation)
        : buf_(buf), code_(on_truncation) {}

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    void expect_consumed() {
        if (pos_ != buf_.size()) raise(code_, "trailing bytes after payload");
    }

private:
    void need(std::size_t n) {
        if (n > buf_.size() - pos_) raise(code_, "file truncated");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    const std::string& buf_;
    std::size_t pos_ = 0;
    ErrorCode code_;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["vocab_size"] = c.vocab_size;
    j["hidden_size"] = c.hidden_size;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["n_kv_heads"] = c.n_kv_heads;
    j["intermediate_size"] = c.intermediate_size;
    j["max_seq_len"] = c.max_seq_len;
    j["rms_eps"] = c.rms_eps;
    j["rope_theta"] = c.rope_theta;
    j["tied_embeddings"] = c.tied_embeddings;
    j["model_id"] = c.model_id;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ErrorCode on_error) {
    auto count = [&](const char* key) -> std::size_t {
        if (!j.contains(key) || !j[key].is_number_unsigned())
            raise(on_error, std::string("config field missing or not a count: ") + key);
        return j[key].get<std::size_t>();
    };
    ModelConfig c;
    c.vocab_size = count("vocab_size");
    c.hidden_size = count("hidden_size");
    c.n_layers = count("n_layers");
    c.n_heads = count("n_heads");
    c.n_kv_heads = count("n_kv_heads");
    c.intermediate_size = count("intermediate_size");
    c.max_seq_len = count("max_seq_len");
    if (!j.contains("rms_eps") || !j["rms_eps"].is_number())
        raise(on_error, "config field missing or not a number: rms_eps");
    c.rms_eps = j["rms_eps"].get<float>();
    if (!j.contains("rope_theta") || !j["rope_theta"].is_number())
        raise(on_error, "config field missing or not a number: rope_theta");
    c.rope_theta = j["rope_theta"].get<float>();
    if (j.contains("tied_embeddings")) {
        if (!j["tied_embeddings"].is_boolean())
            raise(on_error, "config field not a flag: tied_embeddings");
        c.tied_embeddings = j["tied_embeddings"].get<bool>();
    }
    if (j.contains("model_id")) {
        if (!j["model_id"].is_string()) raise(on_error, "config field not a string: model_id");
        c.model_id = j["model_id"].get<std::string>();
    }
    return c;
}

} // namespace unilm::detail
