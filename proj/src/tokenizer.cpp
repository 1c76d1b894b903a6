#include "trafficlm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "trafficlm/error.hpp"

namespace trafficlm::tokenizer {

namespace {

std::uint64_t pair_key(TokenId l, TokenId r) {
    return (std::uint64_t(std::uint32_t(l)) << 32) | std::uint32_t(r);
}

// GPT-2 byte -> code point table.
const std::array<char32_t, 256> &byte_code_points() {
    static const std::array<char32_t, 256> table = [] {
        std::array<char32_t, 256> t{};
        std::array<bool, 256> printable{};
        for (int b = '!'; b <= '~'; ++b) printable[b] = true;
        for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
        for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
        char32_t extra = 256;
        for (int b = 0; b < 256; ++b) t[b] = printable[b] ? char32_t(b) : extra++;
        return t;
    }();
    return table;
}

void append_utf8(std::string &out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

std::string bytes_to_unicode(std::string_view bytes) {
    const auto &table = byte_code_points();
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) append_utf8(out, table[b]);
    return out;
}

std::string unicode_to_bytes(std::string_view text) {
    static const std::map<char32_t, unsigned char> inverse = [] {
        std::map<char32_t, unsigned char> m;
        const auto &table = byte_code_points();
        for (int b = 0; b < 256; ++b) m[table[b]] = static_cast<unsigned char>(b);
        return m;
    }();
    std::string out;
    for (std::size_t i = 0; i < text.size();) {
        const auto c = static_cast<unsigned char>(text[i]);
        char32_t cp;
        std::size_t len;
        if (c < 0x80) {
            cp = c;
            len = 1;
        } else if ((c & 0xE0) == 0xC0) {
            cp = c & 0x1F;
            len = 2;
        } else if ((c & 0xF0) == 0xE0) {
            cp = c & 0x0F;
            len = 3;
        } else {
            throw CorruptFile("invalid UTF-8 in token text");
        }
        if (i + len > text.size()) throw CorruptFile("truncated UTF-8 in token text");
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80) throw CorruptFile("invalid UTF-8 in token text");
            cp = (cp << 6) | (cc & 0x3F);
        }
        auto it = inverse.find(cp);
        if (it == inverse.end()) throw CorruptFile("code point outside the byte table in token text");
        out.push_back(static_cast<char>(it->second));
        i += len;
    }
    return out;
}

std::vector<std::string> default_specials() {
    return {std::string(kBos), std::string(kPad), std::string(kEos), std::string(kUnk), std::string(kMask)};
}

TokenizerModel::TokenizerModel(TokenizerConfig config, std::vector<std::string> specials,
                               std::vector<std::pair<TokenId, TokenId>> merges)
    : config_(config), specials_(std::move(specials)), merges_(std::move(merges)) {
    tokens_ = specials_;
    for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));

    std::unordered_map<std::string, TokenId> by_text;
    for (std::size_t i = specials_.size(); i < tokens_.size(); ++i) by_text.emplace(tokens_[i], static_cast<TokenId>(i));

    const auto n_specials = static_cast<TokenId>(specials_.size());
    for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
        const auto [l, r] = merges_[rank];
        if (l < n_specials || r < n_specials || static_cast<std::size_t>(l) >= tokens_.size() ||
            static_cast<std::size_t>(r) >= tokens_.size()) {
            throw CorruptFile("merge " + std::to_string(rank) + " references an unknown token");
        }
        auto text = tokens_[l] + tokens_[r];
        auto [it, inserted] = by_text.emplace(text, static_cast<TokenId>(tokens_.size()));
        if (inserted) tokens_.push_back(std::move(text));
        merge_rank_.emplace(pair_key(l, r), static_cast<TokenId>(rank));
        merge_result_.push_back(it->second);
    }
}

std::vector<TokenId> TokenizerModel::tokenize_piece(std::string_view piece) const {
    std::vector<TokenId> ids;
    ids.reserve(piece.size());
    for (unsigned char b : piece) ids.push_back(byte_id(b));

    while (ids.size() > 1) {
        TokenId best_rank = -1;
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            auto it = merge_rank_.find(pair_key(ids[i], ids[i + 1]));
            if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) best_rank = it->second;
        }
        if (best_rank < 0) break;
        const auto [l, r] = merges_[static_cast<std::size_t>(best_rank)];
        const TokenId merged = merge_result_[static_cast<std::size_t>(best_rank)];
        std::vector<TokenId> next;
        next.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
                next.push_back(merged);
                ++i;
            } else {
                next.push_back(ids[i]);
            }
        }
        ids = std::move(next);
    }
    return ids;
}

std::vector<TokenId> TokenizerModel::tokenize(std::string_view text, PieceCache *cache) const {
    std::vector<TokenId> out;
    for (auto piece : pretokenize(text)) {
        if (!cache) {
            auto ids = tokenize_piece(piece);
            out.insert(out.end(), ids.begin(), ids.end());
            continue;
        }
        auto it = cache->find(std::string(piece));
        if (it == cache->end()) it = cache->emplace(std::string(piece), tokenize_piece(piece)).first;
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

std::string TokenizerModel::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) {
        if (is_special(id)) continue;
        out += token(id);
    }
    return out;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> pieces;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        if (text[i] == ' ') {
            std::size_t j = i;
            while (j < text.size() && text[j] == ' ') ++j;
            if (j < text.size() && j - i > 1) {
                // leave one space to lead the following word
                pieces.push_back(text.substr(i, j - i - 1));
                i = j - 1;
                continue;
            }
            if (j == text.size()) {
                pieces.push_back(text.substr(i));
                break;
            }
            ++i;  // single space joins the word
        }
        while (i < text.size() && text[i] != ' ') ++i;
        pieces.push_back(text.substr(start, i - start));
    }
    return pieces;
}

std::vector<std::string> normalize(std::vector<std::string> corpus) { return corpus; }

namespace {

class BpeTrainer {
public:
    BpeTrainer(std::span<const std::string> corpus, const TokenizerConfig &config, std::size_t n_specials)
        : config_(config), n_specials_(static_cast<TokenId>(n_specials)) {
        for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
        for (int b = 0; b < 256; ++b) by_text_.emplace(tokens_[b], b);

        std::map<std::string_view, std::int64_t> counts;  // ordered for determinism
        for (const auto &line : corpus) {
            for (auto piece : pretokenize(line)) ++counts[piece];
        }
        for (const auto &[piece, count] : counts) {
            std::vector<TokenId> symbols;
            for (unsigned char b : piece) symbols.push_back(b);
            words_.push_back(std::move(symbols));
            word_counts_.push_back(count);
        }
        for (std::size_t w = 0; w < words_.size(); ++w) add_pairs(w, +1);
        for (const auto &[key, count] : pair_counts_) heap_.push(entry(key, count));
    }

    std::vector<std::pair<TokenId, TokenId>> run() {
        const std::size_t budget = config_.vocab_size - static_cast<std::size_t>(n_specials_);
        std::vector<std::uint32_t> stamp(words_.size(), 0);
        std::uint32_t round = 0;

        while (tokens_.size() < budget && !heap_.empty()) {
            const auto top = heap_.top();
            heap_.pop();
            auto it = pair_counts_.find(top.key);
            if (it == pair_counts_.end() || it->second != top.count) continue;  // stale
            if (top.count < static_cast<std::int64_t>(config_.min_frequency)) break;

            const auto l = static_cast<TokenId>(top.key >> 32);
            const auto r = static_cast<TokenId>(top.key & 0xFFFFFFFF);
            auto text = tokens_[l] + tokens_[r];
            auto [pos, inserted] = by_text_.emplace(text, static_cast<TokenId>(tokens_.size()));
            if (inserted) tokens_.push_back(std::move(text));
            const TokenId merged = pos->second;
            merges_.emplace_back(l, r);

            ++round;
            changed_.clear();
            const auto occurrences = where_[top.key];
            for (auto w : occurrences) {
                if (stamp[w] == round) continue;
                stamp[w] = round;
                if (!contains(words_[w], l, r)) continue;
                add_pairs(w, -1);
                apply(words_[w], l, r, merged);
                add_pairs(w, +1);
            }
            for (auto key : changed_) {
                auto c = pair_counts_.find(key);
                if (c != pair_counts_.end() && c->second > 0) heap_.push(entry(key, c->second));
            }
        }
        return shift(merges_);
    }

private:
    struct Entry {
        std::int64_t count;
        std::uint64_t key;
        const std::vector<std::string> *tokens;
    };
    struct Lower {
        // priority_queue pops the greatest: higher count, then smaller pair text
        bool operator()(const Entry &a, const Entry &b) const {
            if (a.count != b.count) return a.count < b.count;
            const auto &t = *a.tokens;
            const auto &al = t[a.key >> 32], &ar = t[a.key & 0xFFFFFFFF];
            const auto &bl = t[b.key >> 32], &br = t[b.key & 0xFFFFFFFF];
            if (al != bl) return al > bl;
            return ar > br;
        }
    };

    Entry entry(std::uint64_t key, std::int64_t count) const { return {count, key, &tokens_}; }

    static bool contains(const std::vector<TokenId> &w, TokenId l, TokenId r) {
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            if (w[i] == l && w[i + 1] == r) return true;
        }
        return false;
    }

    static void apply(std::vector<TokenId> &w, TokenId l, TokenId r, TokenId merged) {
        std::size_t out = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (i + 1 < w.size() && w[i] == l && w[i + 1] == r) {
                w[out++] = merged;
                ++i;
            } else {
                w[out++] = w[i];
            }
        }
        w.resize(out);
    }

    void add_pairs(std::size_t w, int sign) {
        const auto &symbols = words_[w];
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            const auto key = pair_key(symbols[i], symbols[i + 1]);
            auto &count = pair_counts_[key];
            count += sign * word_counts_[w];
            if (sign > 0) where_[key].push_back(static_cast<std::uint32_t>(w));
            changed_.insert(key);
            if (count == 0) pair_counts_.erase(key);
        }
    }

    // Trainer ids count bytes from 0; the model puts specials first.
    std::vector<std::pair<TokenId, TokenId>> shift(const std::vector<std::pair<TokenId, TokenId>> &merges) const {
        // Merged-token ids depend on creation order, which the model
        // reconstructs identically; only the offset differs.
        std::vector<std::pair<TokenId, TokenId>> out;
        out.reserve(merges.size());
        for (auto [l, r] : merges) out.emplace_back(l + n_specials_, r + n_specials_);
        return out;
    }

    TokenizerConfig config_;
    TokenId n_specials_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> by_text_;
    std::vector<std::vector<TokenId>> words_;
    std::vector<std::int64_t> word_counts_;
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where_;
    std::unordered_set<std::uint64_t> changed_;
    std::priority_queue<Entry, std::vector<Entry>, Lower> heap_;
    std::vector<std::pair<TokenId, TokenId>> merges_;
};

}  // namespace

TokenizerModel train_bbpe(std::span<const std::string> corpus, const TokenizerConfig &config,
                          std::vector<std::string> specials) {
    if (corpus.empty()) throw EmptyCorpus("no lines to train on");
    if (config.vocab_size <= 256 + specials.size()) {
        throw BadConfig("vocab_size must exceed 256 + " + std::to_string(specials.size()) + " specials");
    }
    if (config.min_frequency < 1) throw BadConfig("min_frequency must be >= 1");
    auto merges = BpeTrainer(corpus, config, specials.size()).run();
    return TokenizerModel(config, std::move(specials), std::move(merges));
}

EncodedLine encode_line(const TokenizerModel &tok, std::string_view line, std::size_t max_len,
                        TokenizerModel::PieceCache *cache) {
    if (max_len < 2) throw BadConfig("max_len must be >= 2");
    EncodedLine out;
    out.ids.reserve(max_len);
    out.ids.push_back(kBosId);
    auto body = tok.tokenize(line, cache);
    const auto keep = std::min(body.size(), max_len - 2);
    out.ids.insert(out.ids.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(keep));
    out.ids.push_back(kEosId);
    out.mask.assign(out.ids.size(), 1);
    out.ids.resize(max_len, kPadId);
    out.mask.resize(max_len, 0);
    return out;
}

EncodedBatch EncodedBatch::slice(std::size_t begin, std::size_t end) const {
    EncodedBatch out;
    out.rows = end - begin;
    out.seq_len = seq_len;
    out.input_ids.assign(input_ids.begin() + begin * seq_len, input_ids.begin() + end * seq_len);
    out.attention_mask.assign(attention_mask.begin() + begin * seq_len, attention_mask.begin() + end * seq_len);
    return out;
}

EncodedBatch EncodedBatch::gather(std::span<const std::size_t> which) const {
    EncodedBatch out;
    out.rows = which.size();
    out.seq_len = seq_len;
    out.input_ids.reserve(which.size() * seq_len);
    out.attention_mask.reserve(which.size() * seq_len);
    for (auto r : which) {
        auto ids = ids_row(r);
        auto mask = mask_row(r);
        out.input_ids.insert(out.input_ids.end(), ids.begin(), ids.end());
        out.attention_mask.insert(out.attention_mask.end(), mask.begin(), mask.end());
    }
    return out;
}

EncodedBatch encode_chunked(const TokenizerModel &tok, std::span<const std::string> lines, std::size_t chunk_size,
                            std::size_t max_len) {
    if (chunk_size < 1) throw BadConfig("chunk_size must be >= 1");
    if (max_len < 2) throw BadConfig("max_len must be >= 2");
    EncodedBatch batch;
    batch.seq_len = max_len;
    const std::size_t num_chunks = (lines.size() + chunk_size - 1) / chunk_size;
    TokenizerModel::PieceCache cache;
    for (std::size_t c = 0; c < num_chunks; ++c) {
        const auto start = c * chunk_size;
        const auto end = std::min(lines.size(), start + chunk_size);
        std::vector<TokenId> chunk_ids;
        std::vector<std::uint8_t> chunk_mask;
        chunk_ids.reserve((end - start) * max_len);
        chunk_mask.reserve((end - start) * max_len);
        for (auto i = start; i < end; ++i) {
            auto enc = encode_line(tok, lines[i], max_len, &cache);
            chunk_ids.insert(chunk_ids.end(), enc.ids.begin(), enc.ids.end());
            chunk_mask.insert(chunk_mask.end(), enc.mask.begin(), enc.mask.end());
        }
        batch.input_ids.insert(batch.input_ids.end(), chunk_ids.begin(), chunk_ids.end());
        batch.attention_mask.insert(batch.attention_mask.end(), chunk_mask.begin(), chunk_mask.end());
        batch.rows += end - start;
    }
    return batch;
}

void save_tokenizer(const TokenizerModel &tok, const std::string &dir) {
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir);
    {
        std::ofstream out(base / kVocabFile, std::ios::binary);
        if (!out) throw IoError("cannot write " + (base / kVocabFile).string());
        out << "#config vocab_size=" << tok.config().vocab_size << " min_frequency=" << tok.config().min_frequency
            << " specials=" << tok.specials().size() << '\n';
        for (std::size_t id = 0; id < tok.size(); ++id) {
            const auto tid = static_cast<TokenId>(id);
            const auto text = tok.is_special(tid) ? tok.token(tid) : bytes_to_unicode(tok.token(tid));
            out << nlohmann::json(text).dump() << ' ' << id << '\n';
        }
        if (!out) throw IoError("write failed for " + (base / kVocabFile).string());
    }
    std::ofstream out(base / kMergesFile, std::ios::binary);
    if (!out) throw IoError("cannot write " + (base / kMergesFile).string());
    out << "#version: 0.2\n";
    for (auto [l, r] : tok.merges()) out << bytes_to_unicode(tok.token(l)) << ' ' << bytes_to_unicode(tok.token(r)) << '\n';
    if (!out) throw IoError("write failed for " + (base / kMergesFile).string());
}

TokenizerModel load_tokenizer(const std::string &dir) {
    const auto base = std::filesystem::path(dir);
    const auto vocab_path = base / kVocabFile;
    const auto merges_path = base / kMergesFile;
    for (const auto &p : {vocab_path, merges_path}) {
        if (!std::filesystem::exists(p)) throw MissingFile(p.string());
    }

    std::ifstream vocab_in(vocab_path, std::ios::binary);
    std::string line;
    if (!std::getline(vocab_in, line)) throw CorruptFile(vocab_path.string() + ": empty file");
    TokenizerConfig config;
    std::size_t n_specials = 0;
    if (std::sscanf(line.c_str(), "#config vocab_size=%zu min_frequency=%zu specials=%zu", &config.vocab_size,
                    &config.min_frequency, &n_specials) != 3) {
        throw CorruptFile(vocab_path.string() + ": bad config line");
    }

    std::vector<std::string> vocab;  // rendered text by id
    for (std::size_t line_no = 2; std::getline(vocab_in, line); ++line_no) {
        const auto space = line.rfind(' ');
        if (space == std::string::npos) throw CorruptFile(vocab_path.string() + ":" + std::to_string(line_no));
        std::string text;
        std::size_t id = 0;
        try {
            text = nlohmann::json::parse(line.substr(0, space)).get<std::string>();
            id = std::stoul(line.substr(space + 1));
        } catch (const std::exception &) {
            throw CorruptFile(vocab_path.string() + ":" + std::to_string(line_no) + ": unparseable entry");
        }
        if (id != vocab.size()) throw CorruptFile(vocab_path.string() + ":" + std::to_string(line_no) + ": ids out of order");
        vocab.push_back(std::move(text));
    }
    if (vocab.size() < n_specials + 256) throw CorruptFile(vocab_path.string() + ": too few entries");

    std::vector<std::string> specials(vocab.begin(), vocab.begin() + static_cast<std::ptrdiff_t>(n_specials));
    std::unordered_map<std::string, TokenId> by_text;
    for (std::size_t id = n_specials; id < vocab.size(); ++id) by_text.emplace(vocab[id], static_cast<TokenId>(id));

    std::ifstream merges_in(merges_path, std::ios::binary);
    if (!std::getline(merges_in, line) || !line.starts_with("#version")) {
        throw CorruptFile(merges_path.string() + ": missing version line");
    }
    std::vector<std::pair<TokenId, TokenId>> merges;
    for (std::size_t line_no = 2; std::getline(merges_in, line); ++line_no) {
        std::istringstream fields(line);
        std::string left, right, extra;
        if (!(fields >> left >> right) || (fields >> extra)) {
            throw CorruptFile(merges_path.string() + ":" + std::to_string(line_no) + ": expected two tokens");
        }
        auto l = by_text.find(left), r = by_text.find(right);
        if (l == by_text.end() || r == by_text.end()) {
            throw CorruptFile(merges_path.string() + ":" + std::to_string(line_no) + ": token not in vocabulary");
        }
        merges.emplace_back(l->second, r->second);
    }

    TokenizerModel model(config, std::move(specials), std::move(merges));
    if (model.size() != vocab.size()) throw CorruptFile("vocab.txt and merges.txt disagree on vocabulary size");
    for (std::size_t id = n_specials; id < vocab.size(); ++id) {
        if (bytes_to_unicode(model.token(static_cast<TokenId>(id))) != vocab[id]) {
            throw CorruptFile("vocab.txt entry " + std::to_string(id) + " does not match the merge sequence");
        }
    }
    return model;
}

}  // namespace trafficlm::tokenizer
