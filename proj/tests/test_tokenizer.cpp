#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "support.hpp"
#include "trafficlm/error.hpp"
#include "trafficlm/ppfle.hpp"
#include "trafficlm/rng.hpp"
#include "trafficlm/tokenizer.hpp"

using namespace trafficlm;
using namespace trafficlm::tokenizer;

namespace {

std::string random_bytes(Rng &rng, std::size_t max_len) {
    std::string s;
    const auto n = rng.below(max_len + 1);
    for (std::uint64_t i = 0; i < n; ++i) s.push_back(static_cast<char>(rng.below(256)));
    return s;
}

std::vector<std::string> hashed_lines(std::size_t n, std::uint64_t seed, std::size_t truncate = 8) {
    auto schema = edge_iiot_schema();
    auto table = generate_synthetic((n + 14) / 15, 15, schema, seed);
    auto data = ppfle::encode_table(table, ppfle::HashConfig{"sha256", truncate});
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < n; ++i) lines.push_back(data.lines[i].render());
    return lines;
}

/// Straightforward BPE trainer: recounts every pair from scratch each round.
/// Pieces are maximal runs of the form " ?[^ ]+" or runs of spaces, matching
/// the documented pre-tokenization.
std::vector<std::pair<std::string, std::string>> reference_merges(const std::vector<std::string> &corpus,
                                                                  std::size_t vocab_size, std::size_t min_freq,
                                                                  std::size_t n_specials) {
    std::map<std::string, long> pieces;
    for (const auto &line : corpus) {
        for (auto p : pretokenize(line)) ++pieces[std::string(p)];
    }
    std::vector<std::pair<std::vector<std::string>, long>> words;
    for (const auto &[p, c] : pieces) {
        std::vector<std::string> symbols;
        for (char ch : p) symbols.emplace_back(1, ch);
        words.emplace_back(symbols, c);
    }
    std::set<std::string> tokens;
    for (int b = 0; b < 256; ++b) tokens.insert(std::string(1, static_cast<char>(b)));

    std::vector<std::pair<std::string, std::string>> merges;
    while (tokens.size() < vocab_size - n_specials) {
        std::map<std::pair<std::string, std::string>, long> counts;
        for (const auto &[symbols, c] : words) {
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) counts[{symbols[i], symbols[i + 1]}] += c;
        }
        const std::pair<std::string, std::string> *best = nullptr;
        long best_count = 0;
        for (const auto &[pair, c] : counts) {
            if (c > best_count) {  // map order makes the first maximum the smallest pair
                best = &pair;
                best_count = c;
            }
        }
        if (!best || best_count < static_cast<long>(min_freq)) break;
        const auto pair = *best;
        merges.push_back(pair);
        tokens.insert(pair.first + pair.second);
        for (auto &[symbols, c] : words) {
            std::vector<std::string> out;
            for (std::size_t i = 0; i < symbols.size(); ++i) {
                if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
                    out.push_back(pair.first + pair.second);
                    ++i;
                } else {
                    out.push_back(symbols[i]);
                }
            }
            symbols = std::move(out);
        }
    }
    return merges;
}

void check_mask(const EncodedLine &e) {
    bool seen_pad = false;
    for (std::size_t i = 0; i < e.ids.size(); ++i) {
        CHECK(e.mask[i] == (e.ids[i] != kPadId ? 1 : 0));
        if (e.mask[i] == 0) seen_pad = true;
        if (seen_pad) CHECK(e.mask[i] == 0);
    }
}

}  // namespace

TEST_CASE("normalize is the identity") {
    CHECK(normalize({"abc"}) == std::vector<std::string>{"abc"});
    CHECK(normalize({}).empty());
    CHECK(normalize({"AbCdEf 0123"}) == std::vector<std::string>{"AbCdEf 0123"});
}

TEST_CASE("pretokenize pieces concatenate back to the input") {
    CHECK(pretokenize("ab cd  ef ") == std::vector<std::string_view>{"ab", " cd", " ", " ef", " "});
    Rng rng(4);
    for (int i = 0; i < 500; ++i) {
        std::string s;
        const auto n = rng.below(30);
        for (std::uint64_t k = 0; k < n; ++k) s.push_back(rng.below(3) == 0 ? ' ' : static_cast<char>('a' + rng.below(3)));
        std::string joined;
        for (auto p : pretokenize(s)) joined += p;
        CHECK(joined == s);
    }
}

TEST_CASE("single dominant pair is merged first") {
    std::vector<std::string> corpus(100, "aaaa");
    auto tok = train_bbpe(corpus, {300, 2});
    REQUIRE_FALSE(tok.merges().empty());
    CHECK(tok.merges()[0] == std::pair<TokenId, TokenId>{tok.byte_id('a'), tok.byte_id('a')});
    CHECK(tok.tokenize("aaaa").size() == 1);
}

TEST_CASE("unique pairs under min_frequency 2 give no merges") {
    std::vector<std::string> corpus = {"ab", "cd", "ef"};
    auto tok = train_bbpe(corpus, {300, 2});
    CHECK(tok.merges().empty());
    CHECK(tok.size() == 256 + 5);
}

TEST_CASE("training is deterministic and matches a brute-force trainer") {
    Rng rng(5);
    for (int trial = 0; trial < 8; ++trial) {
        std::vector<std::string> corpus;
        const auto n = 5 + rng.below(30);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::string s;
            const auto len = rng.below(25);
            for (std::uint64_t k = 0; k < len; ++k) s.push_back(" abcab"[rng.below(6)]);
            corpus.push_back(s);
        }
        const std::size_t vocab = 261 + rng.below(40);
        const std::size_t min_freq = 1 + rng.below(3);
        auto tok = train_bbpe(corpus, {vocab, min_freq});
        CHECK(tok == train_bbpe(corpus, {vocab, min_freq}));

        auto expected = reference_merges(corpus, vocab, min_freq, 5);
        REQUIRE(tok.merges().size() == expected.size());
        for (std::size_t m = 0; m < expected.size(); ++m) {
            CHECK(tok.token(tok.merges()[m].first) == expected[m].first);
            CHECK(tok.token(tok.merges()[m].second) == expected[m].second);
        }
    }
    auto lines = hashed_lines(300, 6);
    auto a = train_bbpe(lines, {600, 2});
    auto expected = reference_merges(lines, 600, 2, 5);
    REQUIRE(a.merges().size() == expected.size());
    for (std::size_t m = 0; m < expected.size(); ++m) {
        CHECK(a.token(a.merges()[m].first) + a.token(a.merges()[m].second) ==
              expected[m].first + expected[m].second);
    }
}

TEST_CASE("vocabulary invariants") {
    auto lines = hashed_lines(600, 7);
    auto tok = train_bbpe(lines, {1000, 2});
    CHECK(tok.size() <= 1000);
    CHECK(tok.specials() == default_specials());
    CHECK(tok.token(kBosId) == "<s>");
    CHECK(tok.token(kPadId) == "<pad>");
    CHECK(tok.token(kEosId) == "</s>");
    CHECK(tok.token(kUnkId) == "<unk>");
    CHECK(tok.token(kMaskId) == "<mask>");
    std::set<std::string> texts;
    for (std::size_t i = 5; i < tok.size(); ++i) texts.insert(tok.token(static_cast<TokenId>(i)));
    for (int b = 0; b < 256; ++b) CHECK(tok.token(tok.byte_id(static_cast<std::uint8_t>(b))) == std::string(1, static_cast<char>(b)));
    for (auto [l, r] : tok.merges()) CHECK(texts.contains(tok.token(l) + tok.token(r)));

    // Compression on training data.
    for (std::size_t i = 0; i < 50; ++i) CHECK(tok.tokenize(lines[i]).size() <= lines[i].size());
}

TEST_CASE("training errors") {
    CHECK_THROWS_AS(train_bbpe(std::vector<std::string>{}, {1000, 2}), EmptyCorpus);
    std::vector<std::string> corpus = {"abc"};
    CHECK_THROWS_AS(train_bbpe(corpus, {261, 2}), BadConfig);
    CHECK_THROWS_AS(train_bbpe(corpus, {1000, 0}), BadConfig);
}

TEST_CASE("arbitrary bytes never produce unk and decode back") {
    auto tok = train_bbpe(hashed_lines(300, 8), {800, 2});
    Rng rng(9);
    for (int i = 0; i < 2000; ++i) {
        auto s = random_bytes(rng, 64);
        auto ids = tok.tokenize(s);
        for (auto id : ids) CHECK(id != kUnkId);
        CHECK(tok.decode(ids) == s);
    }
}

TEST_CASE("encode_line framing, padding and truncation") {
    auto tok = train_bbpe(hashed_lines(100, 10), {500, 2});
    auto empty = encode_line(tok, "", 8);
    CHECK(empty.ids == std::vector<TokenId>{kBosId, kEosId, kPadId, kPadId, kPadId, kPadId, kPadId, kPadId});
    CHECK(empty.mask == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 0});

    for (const auto &line : hashed_lines(1000, 11, 16)) {
        auto e = encode_line(tok, line, 512);
        REQUIRE(e.ids.size() == 512);
        check_mask(e);
        const auto n = static_cast<std::size_t>(std::count(e.mask.begin(), e.mask.end(), 1));
        if (e.ids[n - 1] == kEosId && n < 512) {
            CHECK(tok.decode(std::span<const TokenId>(e.ids.data() + 1, n - 2)) == line);
        }
    }

    // A long line: full 64-hex digests over 53 columns go past 512 tokens.
    auto long_line = hashed_lines(1, 12, 64)[0];
    const auto full = tok.tokenize(long_line).size() + 2;
    REQUIRE(full > 512);
    auto e = encode_line(tok, long_line, 512);
    CHECK(e.ids.size() == 512);
    CHECK(e.ids.front() == kBosId);
    CHECK(e.ids.back() == kEosId);
    CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 512);
    auto head = tok.tokenize(long_line);
    CHECK(std::equal(e.ids.begin() + 1, e.ids.end() - 1, head.begin()));

    CHECK_THROWS_AS(encode_line(tok, "x", 1), BadConfig);
}

TEST_CASE("chunked encoding equals unchunked") {
    auto lines = hashed_lines(1000, 13);
    auto tok = train_bbpe(lines, {700, 2});
    auto whole = encode_chunked(tok, lines, lines.size(), 128);
    CHECK(whole.rows == 1000);
    CHECK(whole.seq_len == 128);
    for (std::size_t chunk : {1u, 7u, 333u, 5000u}) CHECK(encode_chunked(tok, lines, chunk, 128) == whole);
    for (std::size_t r = 0; r < whole.rows; r += 97) {
        auto e = encode_line(tok, lines[r], 128);
        CHECK(std::equal(e.ids.begin(), e.ids.end(), whole.ids_row(r).begin()));
    }
    auto none = encode_chunked(tok, std::vector<std::string>{}, 5000, 128);
    CHECK(none.rows == 0);
    CHECK(none.input_ids.empty());
    CHECK_THROWS_AS(encode_chunked(tok, lines, 0, 128), BadConfig);

    std::vector<std::size_t> pick = {3, 1, 4};
    auto g = whole.gather(pick);
    CHECK(g.rows == 3);
    CHECK(std::equal(g.ids_row(0).begin(), g.ids_row(0).end(), whole.ids_row(3).begin()));
    CHECK(whole.slice(2, 5).rows == 3);
}

TEST_CASE("save and load round-trip") {
    test::TempDir dir;
    auto lines = hashed_lines(200, 14);
    auto tok = train_bbpe(lines, {600, 2});
    save_tokenizer(tok, dir.file("tok"));
    auto back = load_tokenizer(dir.file("tok"));
    CHECK(back == tok);
    CHECK(back.size() == tok.size());
    for (std::size_t i = 0; i < 100; ++i) CHECK(encode_line(back, lines[i], 128).ids == encode_line(tok, lines[i], 128).ids);

    auto vocab = test::read_file(dir.file("tok/vocab.txt"));
    CHECK(vocab.starts_with("#config vocab_size=600 min_frequency=2 specials=5\n"));
    CHECK(test::read_file(dir.file("tok/merges.txt")).starts_with("#version: 0.2\n"));
}

TEST_CASE("corrupt or missing tokenizer files are rejected") {
    test::TempDir dir;
    auto tok = train_bbpe(hashed_lines(200, 15), {600, 2});
    save_tokenizer(tok, dir.file("tok"));
    const auto merges_path = dir.file("tok/merges.txt");
    const auto original = test::read_file(merges_path);

    test::write_file(merges_path, original + "\xC4\xA0zzzz qqqq\n");
    CHECK_THROWS_AS(load_tokenizer(dir.file("tok")), CorruptFile);
    test::write_file(merges_path, original + "onlyone\n");
    CHECK_THROWS_AS(load_tokenizer(dir.file("tok")), CorruptFile);
    test::write_file(merges_path, original);
    CHECK_NOTHROW(load_tokenizer(dir.file("tok")));

    std::filesystem::remove(merges_path);
    CHECK_THROWS_AS(load_tokenizer(dir.file("tok")), MissingFile);
    CHECK_THROWS_AS(load_tokenizer(dir.file("absent")), MissingFile);
}

TEST_CASE("byte rendering round-trips") {
    Rng rng(16);
    for (int i = 0; i < 200; ++i) {
        auto s = random_bytes(rng, 32);
        CHECK(unicode_to_bytes(bytes_to_unicode(s)) == s);
    }
    CHECK(bytes_to_unicode(" ") == "\xC4\xA0");
}
