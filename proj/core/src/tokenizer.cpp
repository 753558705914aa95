// SPDX-License-Identifier: MIT
#include "unilm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include "base64.hpp"
#include "json.hpp"

namespace unilm {

namespace {

using json = nlohmann::json;

constexpr std::uint32_t kNone = 0xFFFFFFFFu;

std::uint64_t pair_key(std::uint32_t l, std::uint32_t r) {
    return (static_cast<std::uint64_t>(l) << 32) | r;
}

// Single left-to-right pass replacing non-overlapping (l, r) with result.
void apply_merge(std::vector<std::uint32_t>& seq, std::uint32_t l, std::uint32_t r,
                 std::uint32_t result) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == l && seq[i + 1] == r) {
            seq[w++] = result;
            i += 2;
        } else {
            seq[w++] = seq[i++];
        }
    }
    seq.resize(w);
}

// Appends `bytes` to `out` as UTF-8, replacing malformed sequences with
// U+FFFD. Returns true when a replacement happened.
bool sanitize_utf8(std::string_view bytes, std::string& out) {
    bool replaced = false;
    std::size_t i = 0;
    auto cont = [&](std::size_t k, std::uint8_t lo, std::uint8_t hi) {
        if (i + k >= bytes.size()) return false;
        auto b = static_cast<std::uint8_t>(bytes[i + k]);
        return b >= lo && b <= hi;
    };
    while (i < bytes.size()) {
        auto b0 = static_cast<std::uint8_t>(bytes[i]);
        std::size_t len = 0;
        if (b0 < 0x80) len = 1;
        else if (b0 >= 0xC2 && b0 <= 0xDF && cont(1, 0x80, 0xBF)) len = 2;
        else if (b0 == 0xE0 && cont(1, 0xA0, 0xBF) && cont(2, 0x80, 0xBF)) len = 3;
        else if (b0 >= 0xE1 && b0 <= 0xEC && cont(1, 0x80, 0xBF) && cont(2, 0x80, 0xBF)) len = 3;
        else if (b0 == 0xED && cont(1, 0x80, 0x9F) && cont(2, 0x80, 0xBF)) len = 3;
        else if (b0 >= 0xEE && b0 <= 0xEF && cont(1, 0x80, 0xBF) && cont(2, 0x80, 0xBF)) len = 3;
        else if (b0 == 0xF0 && cont(1, 0x90, 0xBF) && cont(2, 0x80, 0xBF) && cont(3, 0x80, 0xBF))
            len = 4;
        else if (b0 >= 0xF1 && b0 <= 0xF3 && cont(1, 0x80, 0xBF) && cont(2, 0x80, 0xBF) &&
                 cont(3, 0x80, 0xBF))
            len = 4;
        else if (b0 == 0xF4 && cont(1, 0x80, 0x8F) && cont(2, 0x80, 0xBF) && cont(3, 0x80, 0xBF))
            len = 4;

        if (len == 0) {
            out += "\xEF\xBF\xBD";
            replaced = true;
            ++i;
        } else {
            out.append(bytes.substr(i, len));
            i += len;
        }
    }
    return replaced;
}

} // namespace

void Tokenizer::build_indexes() {
    special_ids_.assign(vocab_.size(), false);
    for (const auto& [name, id] : specials_) {
        (void)name;
        special_ids_[id] = true;
    }
    token_index_.clear();
    token_index_.reserve(vocab_.size() * 2);
    for (std::uint32_t id = 0; id < vocab_.size(); ++id) token_index_.emplace(vocab_[id], id);
    merge_index_.clear();
    merge_index_.reserve(merges_.size() * 2);
    for (const MergeRule& m : merges_)
        merge_index_.emplace(pair_key(m.left, m.right), std::make_pair(m.result, m.priority));
}

bool Tokenizer::is_special(std::uint32_t id) const noexcept {
    return id < special_ids_.size() && special_ids_[id];
}

Tokenizer Tokenizer::byte_fallback(const std::vector<std::string>& special_tokens) {
    Tokenizer tok;
    tok.vocab_.reserve(kByteAlphabet + special_tokens.size());
    for (unsigned b = 0; b < kByteAlphabet; ++b)
        tok.vocab_.push_back(std::string(1, static_cast<char>(b)));
    for (const std::string& name : special_tokens) {
        if (name.empty()) raise(ErrorCode::InvalidConfig, "special token name must be non-empty");
        if (name.size() == 1 || tok.specials_.count(name))
            raise(ErrorCode::InvalidConfig, "special token collides with an existing token: " + name);
        tok.specials_.emplace(name, static_cast<std::uint32_t>(tok.vocab_.size()));
        tok.vocab_.push_back(name);
    }
    tok.build_indexes();
    return tok;
}

Tokenizer Tokenizer::train_bpe(const std::vector<std::string>& corpus,
                               std::size_t target_vocab_size,
                               const std::vector<std::string>& special_tokens) {
    if (corpus.empty()) raise(ErrorCode::EmptyCorpus, "training corpus is empty");
    if (target_vocab_size < kByteAlphabet + special_tokens.size())
        raise(ErrorCode::TargetTooSmall,
              "target vocab size is below the byte alphabet plus special tokens");

    Tokenizer tok = byte_fallback(special_tokens);

    std::vector<std::vector<std::uint32_t>> docs;
    docs.reserve(corpus.size());
    for (const std::string& doc : corpus) {
        std::vector<std::uint32_t> ids;
        ids.reserve(doc.size());
        for (char c : doc) ids.push_back(static_cast<std::uint8_t>(c));
        docs.push_back(std::move(ids));
    }

    std::unordered_map<std::string, bool> seen;
    for (const std::string& s : tok.vocab_) seen.emplace(s, true);

    while (tok.vocab_.size() < target_vocab_size) {
        // Count every adjacent pair; overlapping occurrences all count.
        std::unordered_map<std::uint64_t, long long> counts;
        for (const auto& doc : docs)
            for (std::size_t i = 0; i + 1 < doc.size(); ++i)
                ++counts[pair_key(doc[i], doc[i + 1])];

        // Best pair by count, ties by smallest (left, right). Pairs whose
        // concatenation already names a vocab entry are not mergeable; a
        // second token with the same byte-string would break id uniqueness.
        bool found = false;
        long long best_count = 0;
        std::uint64_t best_key = 0;
        for (const auto& [key, count] : counts) {
            auto l = static_cast<std::uint32_t>(key >> 32);
            auto r = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
            if (seen.count(tok.vocab_[l] + tok.vocab_[r])) continue;
            if (!found || count > best_count || (count == best_count && key < best_key)) {
                found = true;
                best_count = count;
                best_key = key;
            }
        }
        if (!found) {
            tok.train_exhausted_ = true;
            break;
        }

        auto l = static_cast<std::uint32_t>(best_key >> 32);
        auto r = static_cast<std::uint32_t>(best_key & 0xFFFFFFFFu);
        auto result = static_cast<std::uint32_t>(tok.vocab_.size());
        std::string concat = tok.vocab_[l] + tok.vocab_[r];
        tok.vocab_.push_back(concat);
        seen.emplace(std::move(concat), true);
        tok.merges_.push_back({l, r, result, static_cast<std::uint32_t>(tok.merges_.size())});
        for (auto& doc : docs) apply_merge(doc, l, r, result);
    }

    tok.build_indexes();
    return tok;
}

std::vector<std::uint32_t> Tokenizer::encode(std::string_view text) const {
    std::size_t n = text.size();
    if (n == 0) return {};

    std::vector<std::uint32_t> ids(n);
    std::vector<std::uint32_t> next(n), prev(n);
    std::vector<bool> alive(n, true);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = static_cast<std::uint8_t>(text[i]);
        next[i] = (i + 1 < n) ? static_cast<std::uint32_t>(i + 1) : kNone;
        prev[i] = (i > 0) ? static_cast<std::uint32_t>(i - 1) : kNone;
    }

    // (priority, left position). The position component makes equal-priority
    // merges apply left to right, matching training's replacement pass.
    using Cand = std::pair<std::uint32_t, std::uint32_t>;
    std::priority_queue<Cand, std::vector<Cand>, std::greater<Cand>> heap;
    auto push_candidate = [&](std::uint32_t pos) {
        if (pos == kNone || next[pos] == kNone) return;
        auto it = merge_index_.find(pair_key(ids[pos], ids[next[pos]]));
        if (it != merge_index_.end()) heap.emplace(it->second.second, pos);
    };
    for (std::size_t i = 0; i + 1 < n; ++i) push_candidate(static_cast<std::uint32_t>(i));

    while (!heap.empty()) {
        auto [prio, pos] = heap.top();
        heap.pop();
        if (!alive[pos] || next[pos] == kNone) continue;
        std::uint32_t right = next[pos];
        auto it = merge_index_.find(pair_key(ids[pos], ids[right]));
        if (it == merge_index_.end() || it->second.second != prio) continue; // stale entry

        ids[pos] = it->second.first;
        alive[right] = false;
        next[pos] = next[right];
        if (next[pos] != kNone) prev[next[pos]] = pos;
        push_candidate(prev[pos]);
        push_candidate(pos);
    }

    std::vector<std::uint32_t> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i != kNone && i < n;) {
        out.push_back(ids[i]);
        i = next[i];
        if (i == kNone) break;
    }
    return out;
}

DecodeResult Tokenizer::decode(std::span<const std::uint32_t> ids) const {
    std::string bytes;
    for (std::uint32_t id : ids) {
        if (id >= vocab_.size())
            raise(ErrorCode::IdOutOfRange, "token id " + std::to_string(id) + " out of range");
        if (is_special(id)) continue; // specials are stripped, not rendered
        bytes += vocab_[id];
    }
    DecodeResult res;
    res.replaced_invalid_utf8 = sanitize_utf8(bytes, res.text);
    return res;
}

std::pair<Tokenizer, TokenizerMergeReport> merge_tokenizers(const Tokenizer& base,
                                                            const Tokenizer& extension) {
    if (base.base_alphabet_size() != extension.base_alphabet_size())
        raise(ErrorCode::AlphabetMismatch, "tokenizers use different base alphabets");

    Tokenizer merged = base;
    merged.train_exhausted_ = false;

    TokenizerMergeReport report;
    report.base_size = base.vocab_.size();
    report.extension_size = extension.vocab_.size();

    std::unordered_map<std::string, std::uint32_t> index;
    index.reserve(merged.vocab_.size() * 2);
    for (std::uint32_t id = 0; id < merged.vocab_.size(); ++id)
        index.emplace(merged.vocab_[id], id);

    // Base ids stay bitwise stable; unseen extension byte-strings get fresh
    // ids in extension order.
    for (std::uint32_t eid = 0; eid < extension.vocab_.size(); ++eid) {
        const std::string& s = extension.vocab_[eid];
        auto it = index.find(s);
        if (it != index.end()) {
            report.id_mapping[eid] = it->second;
        } else {
            auto nid = static_cast<std::uint32_t>(merged.vocab_.size());
            merged.vocab_.push_back(s);
            index.emplace(s, nid);
            report.id_mapping[eid] = nid;
        }
    }

    for (const auto& [name, sid] : extension.specials_)
        if (!merged.specials_.count(name)) merged.specials_.emplace(name, report.id_mapping[sid]);

    // Rewrite extension merges through the mapping. A merge whose result was
    // deduplicated into a base token is dropped: the base token (and its
    // embedding row) wins.
    for (const MergeRule& m : extension.merges_) {
        std::uint32_t result = report.id_mapping.at(m.result);
        if (result < report.base_size) continue;
        merged.merges_.push_back({report.id_mapping.at(m.left), report.id_mapping.at(m.right),
                                  result, static_cast<std::uint32_t>(merged.merges_.size())});
    }

    report.merged_size = merged.vocab_.size();
    report.duplicates_dropped = report.base_size + report.extension_size - report.merged_size;
    merged.build_indexes();
    return {std::move(merged), report};
}

std::string Tokenizer::to_json() const {
    json j;
    j["version"] = 1;
    j["type"] = "byte_bpe";
    json vocab = json::array();
    for (const std::string& s : vocab_) vocab.push_back(detail::base64_encode(s));
    j["vocab"] = std::move(vocab);
    json merges = json::array();
    for (const MergeRule& m : merges_) merges.push_back(json::array({m.left, m.right}));
    j["merges"] = std::move(merges);
    j["special_tokens"] = json::object();
    for (const auto& [name, id] : specials_) j["special_tokens"][name] = id;
    return j.dump(2);
}

Tokenizer Tokenizer::from_json(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) raise(ErrorCode::MalformedFile, "tokenizer file is not valid JSON");
    if (!j.contains("version") || !j["version"].is_number_integer() || j["version"] != 1)
        raise(ErrorCode::MalformedFile, "tokenizer field 'version' must be 1");
    if (!j.contains("type") || j["type"] != "byte_bpe")
        raise(ErrorCode::MalformedFile, "tokenizer field 'type' must be 'byte_bpe'");
    if (!j.contains("vocab") || !j["vocab"].is_array())
        raise(ErrorCode::MalformedFile, "tokenizer field 'vocab' must be an array");
    if (!j.contains("merges") || !j["merges"].is_array())
        raise(ErrorCode::MalformedFile, "tokenizer field 'merges' must be an array");

    Tokenizer tok;
    tok.vocab_.reserve(j["vocab"].size());
    std::unordered_map<std::string, std::uint32_t> index;
    for (const auto& entry : j["vocab"]) {
        if (!entry.is_string())
            raise(ErrorCode::MalformedFile, "tokenizer field 'vocab' holds a non-string entry");
        auto bytes = detail::base64_decode(entry.get<std::string>());
        if (!bytes)
            raise(ErrorCode::MalformedFile, "tokenizer field 'vocab' holds invalid base64");
        if (index.count(*bytes))
            raise(ErrorCode::MalformedFile, "tokenizer field 'vocab' holds duplicate byte-strings");
        index.emplace(*bytes, static_cast<std::uint32_t>(tok.vocab_.size()));
        tok.vocab_.push_back(std::move(*bytes));
    }
    if (tok.vocab_.size() < kByteAlphabet)
        raise(ErrorCode::MalformedFile, "tokenizer field 'vocab' is missing the byte alphabet");
    for (unsigned b = 0; b < kByteAlphabet; ++b)
        if (tok.vocab_[b] != std::string(1, static_cast<char>(b)))
            raise(ErrorCode::MalformedFile,
                  "tokenizer field 'vocab' must start with the 256 single bytes in order");

    std::uint32_t prio = 0;
    for (const auto& entry : j["merges"]) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_unsigned() ||
            !entry[1].is_number_unsigned())
            raise(ErrorCode::MalformedFile, "tokenizer field 'merges' holds a malformed pair");
        auto l = entry[0].get<std::uint32_t>();
        auto r = entry[1].get<std::uint32_t>();
        if (l >= tok.vocab_.size() || r >= tok.vocab_.size())
            raise(ErrorCode::MalformedFile, "tokenizer field 'merges' references an unknown id");
        auto it = index.find(tok.vocab_[l] + tok.vocab_[r]);
        if (it == index.end())
            raise(ErrorCode::MalformedFile,
                  "tokenizer field 'merges' produces a token missing from 'vocab'");
        std::uint32_t result = it->second;
        if (result <= l || result <= r)
            raise(ErrorCode::MalformedFile,
                  "tokenizer field 'merges' result id must exceed both inputs");
        tok.merges_.push_back({l, r, result, prio++});
    }
    {
        std::unordered_map<std::uint64_t, bool> pairs;
        std::unordered_map<std::uint32_t, bool> results;
        for (const MergeRule& m : tok.merges_) {
            if (!pairs.emplace(pair_key(m.left, m.right), true).second)
                raise(ErrorCode::MalformedFile, "tokenizer field 'merges' holds a duplicate pair");
            if (!results.emplace(m.result, true).second)
                raise(ErrorCode::MalformedFile, "tokenizer field 'merges' holds a duplicate result");
        }
    }

    if (j.contains("special_tokens")) {
        if (!j["special_tokens"].is_object())
            raise(ErrorCode::MalformedFile, "tokenizer field 'special_tokens' must be an object");
        for (const auto& [name, idv] : j["special_tokens"].items()) {
            if (!idv.is_number_unsigned())
                raise(ErrorCode::MalformedFile,
                      "tokenizer field 'special_tokens' ids must be unsigned");
            auto id = idv.get<std::uint32_t>();
            if (id < kByteAlphabet || id >= tok.vocab_.size())
                raise(ErrorCode::MalformedFile,
                      "tokenizer field 'special_tokens' id out of range: " + name);
            tok.specials_.emplace(name, id);
        }
    }

    tok.build_indexes();
    return tok;
}

void Tokenizer::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::Io, "cannot open for writing: " + path);
    out << to_json() << '\n';
    if (!out) raise(ErrorCode::Io, "write failed: " + path);
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::Io, "cannot open for reading: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

std::vector<std::string> read_jsonl_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::Io, "cannot open for reading: " + path);
    std::vector<std::string> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            raise(ErrorCode::MalformedFile,
                  "corpus line " + std::to_string(lineno) + " is not a JSON object");
        if (!j.contains("text") || !j["text"].is_string())
            raise(ErrorCode::MalformedFile,
                  "corpus line " + std::to_string(lineno) + " is missing string field 'text'");
        docs.push_back(j["text"].get<std::string>());
    }
    return docs;
}

} // namespace unilm
