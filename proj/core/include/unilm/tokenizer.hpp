// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unilm/error.hpp"

namespace unilm {

// One learned merge: token ids (left, right) concatenate into result.
// priority is the application order; lower runs first. Priorities are dense
// 0..|merges|-1 and result ids always exceed both input ids.
struct MergeRule {
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t result = 0;
    std::uint32_t priority = 0;

    friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

struct TokenizerMergeReport {
    std::size_t base_size = 0;
    std::size_t extension_size = 0;
    std::size_t merged_size = 0;
    std::size_t duplicates_dropped = 0;
    std::map<std::uint32_t, std::uint32_t> id_mapping; // extension id -> merged id
};

struct DecodeResult {
    std::string text;
    bool replaced_invalid_utf8 = false;
};

class Tokenizer;
std::pair<Tokenizer, TokenizerMergeReport> merge_tokenizers(const Tokenizer& base,
                                                            const Tokenizer& extension);

// Byte-level BPE tokenizer. Vocab ids are dense: ids 0..255 are the single
// bytes, special tokens follow, learned merge results come last.
class Tokenizer {
public:
    static constexpr std::size_t kByteAlphabet = 256;

    // Byte vocabulary plus optional special tokens, no merges.
    static Tokenizer byte_fallback(const std::vector<std::string>& special_tokens = {});

    // Greedy BPE: repeatedly merge the most frequent adjacent pair, ties
    // broken by the lexicographically smallest (left_id, right_id). Stops at
    // target_vocab_size, or earlier with train_exhausted() set when no
    // mergeable pair remains.
    static Tokenizer train_bpe(const std::vector<std::string>& corpus,
                               std::size_t target_vocab_size,
                               const std::vector<std::string>& special_tokens = {});

    // Applies merges in priority order until fixpoint. Total on any byte
    // string; never emits special ids.
    std::vector<std::uint32_t> encode(std::string_view text) const;

    // Concatenates token byte-strings, skipping specials, and validates the
    // result as UTF-8 (invalid sequences become U+FFFD and set the flag).
    DecodeResult decode(std::span<const std::uint32_t> ids) const;

    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    const std::vector<std::string>& vocab() const noexcept { return vocab_; }
    const std::vector<MergeRule>& merges() const noexcept { return merges_; }
    const std::map<std::string, std::uint32_t>& special_tokens() const noexcept {
        return specials_;
    }
    std::size_t base_alphabet_size() const noexcept { return kByteAlphabet; }
    bool is_special(std::uint32_t id) const noexcept;

    // True when training stopped short of the target because the corpus ran
    // out of mergeable pairs. Transient: not serialized, ignored by ==.
    bool train_exhausted() const noexcept { return train_exhausted_; }

    std::string to_json() const;
    static Tokenizer from_json(std::string_view text);
    void save(const std::string& path) const;
    static Tokenizer load(const std::string& path);

    bool operator==(const Tokenizer& other) const {
        return vocab_ == other.vocab_ && merges_ == other.merges_ && specials_ == other.specials_;
    }

private:
    Tokenizer() = default;
    void build_indexes();

    friend std::pair<Tokenizer, TokenizerMergeReport> merge_tokenizers(const Tokenizer&,
                                                                       const Tokenizer&);

    std::vector<std::string> vocab_;
    std::vector<MergeRule> merges_;
    std::map<std::string, std::uint32_t> specials_;
    bool train_exhausted_ = false;

    // Derived lookup structures, rebuilt by build_indexes().
    std::vector<bool> special_ids_;
    std::unordered_map<std::string, std::uint32_t> token_index_;
    std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> merge_index_;
};

// Reads a JSONL corpus: one JSON object per non-empty line, document text
// under key "text".
std::vector<std::string> read_jsonl_corpus(const std::string& path);

} // namespace unilm
