#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace trafficlm::tokenizer {

using TokenId = std::int32_t;

/// Special tokens in id order; ids 0..4 are reserved for them.
inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kMask = "<mask>";
inline constexpr TokenId kBosId = 0;
inline constexpr TokenId kPadId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kMaskId = 4;

std::vector<std::string> default_specials();

struct TokenizerConfig {
    std::size_t vocab_size = 5000;
    std::size_t min_frequency = 2;
};

/// Learned byte-level BPE vocabulary.
///
/// Id layout: specials first (0..n_specials-1), then the 256 single-byte
/// tokens in byte order, then one token per merge in learned order.
class TokenizerModel {
public:
    TokenizerModel() = default;
    TokenizerModel(TokenizerConfig config, std::vector<std::string> specials,
                   std::vector<std::pair<TokenId, TokenId>> merges);

    const TokenizerConfig &config() const { return config_; }
    const std::vector<std::string> &specials() const { return specials_; }
    const std::vector<std::pair<TokenId, TokenId>> &merges() const { return merges_; }

    std::size_t size() const { return tokens_.size(); }
    /// Raw bytes of a non-special token, or the special's text.
    const std::string &token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < specials_.size(); }
    TokenId byte_id(std::uint8_t b) const { return static_cast<TokenId>(specials_.size()) + b; }

    /// Piece -> ids memo owned by the caller, so the model itself stays
    /// immutable and shareable across threads.
    using PieceCache = std::unordered_map<std::string, std::vector<TokenId>>;

    /// BPE segmentation of raw bytes (no framing).
    std::vector<TokenId> tokenize(std::string_view text, PieceCache *cache = nullptr) const;

    /// Concatenated bytes of the non-special tokens.
    std::string decode(std::span<const TokenId> ids) const;

    bool operator==(const TokenizerModel &o) const {
        return config_.vocab_size == o.config_.vocab_size && config_.min_frequency == o.config_.min_frequency &&
               specials_ == o.specials_ && merges_ == o.merges_;
    }

private:
    std::vector<TokenId> tokenize_piece(std::string_view piece) const;

    TokenizerConfig config_;
    std::vector<std::string> specials_;
    std::vector<std::pair<TokenId, TokenId>> merges_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::uint64_t, TokenId> merge_rank_;  // (left,right) -> merge index
    std::vector<TokenId> merge_result_;                       // merge index -> merged token id
};

/// Splits text into pre-tokenization pieces: an optional single leading
/// space plus a run of non-space bytes, or a run of spaces not followed by a
/// word. Concatenating the pieces gives back the input. Merges never cross
/// piece boundaries.
std::vector<std::string_view> pretokenize(std::string_view text);

/// Identity: hashed corpora are already canonical.
std::vector<std::string> normalize(std::vector<std::string> corpus);

/// Trains byte-level BPE. Starting from the 256 byte tokens, repeatedly merges
/// the most frequent adjacent pair whose count is at least `min_frequency`
/// until the vocabulary (bytes + merges + specials) reaches `vocab_size` or no
/// pair qualifies. Equal counts go to the lexicographically smallest
/// (left bytes, right bytes) pair.
TokenizerModel train_bbpe(std::span<const std::string> corpus, const TokenizerConfig &config = {},
                          std::vector<std::string> specials = default_specials());

struct EncodedLine {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> mask;
};

/// <s> tokens </s>, truncated to max_len keeping the head and a final </s>,
/// right-padded with <pad> to exactly max_len.
EncodedLine encode_line(const TokenizerModel &tok, std::string_view line, std::size_t max_len = 512,
                        TokenizerModel::PieceCache *cache = nullptr);

/// Row-major [rows x seq_len] ids and attention mask.
struct EncodedBatch {
    std::size_t rows = 0;
    std::size_t seq_len = 0;
    std::vector<TokenId> input_ids;
    std::vector<std::uint8_t> attention_mask;

    std::span<const TokenId> ids_row(std::size_t r) const { return {input_ids.data() + r * seq_len, seq_len}; }
    std::span<const std::uint8_t> mask_row(std::size_t r) const {
        return {attention_mask.data() + r * seq_len, seq_len};
    }
    /// Rows [begin, end) as a new batch.
    EncodedBatch slice(std::size_t begin, std::size_t end) const;
    EncodedBatch gather(std::span<const std::size_t> rows) const;

    bool operator==(const EncodedBatch &) const = default;
};

/// Encodes `lines` in ceil(n / chunk_size) chunks and concatenates the
/// per-chunk blocks along the row dimension.
EncodedBatch encode_chunked(const TokenizerModel &tok, std::span<const std::string> lines,
                            std::size_t chunk_size = 5000, std::size_t max_len = 512);

inline constexpr std::string_view kVocabFile = "vocab.txt";
inline constexpr std::string_view kMergesFile = "merges.txt";

/// Writes vocab.txt and merges.txt into `dir` (created if missing).
///
/// vocab.txt: a "#config vocab_size=N min_frequency=M specials=K" line, then
/// one `<json string> <id>` line per token in id order. Byte tokens are shown
/// through the GPT-2 byte-to-unicode table so every line is valid UTF-8.
/// merges.txt: a "#version: 0.2" line, then one "left right" pair per merge
/// in the same rendering.
void save_tokenizer(const TokenizerModel &tok, const std::string &dir);
TokenizerModel load_tokenizer(const std::string &dir);

/// GPT-2 printable rendering of raw bytes and its inverse.
std::string bytes_to_unicode(std::string_view bytes);
std::string unicode_to_bytes(std::string_view text);

}  // namespace trafficlm::tokenizer
