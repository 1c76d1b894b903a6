// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "support.hpp"
#include "trafficlm/benchmark.hpp"
#include "trafficlm/checkpoint.hpp"
#include "trafficlm/config.hpp"
#include "trafficlm/metrics.hpp"
#include "trafficlm/pipeline.hpp"
#include "trafficlm/ppfle.hpp"
#include "trafficlm/rng.hpp"
#include "trafficlm/spectrum.hpp"
#include "trafficlm/tokenizer.hpp"

using namespace trafficlm;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string &what) {
        if (!ok) {
            if (pass) detail << "failed: ";
            else detail << "; ";
            detail << what;
            pass = false;
        }
    }
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

/// Random table up to max_rows x max_cols. Values always contain at least one
/// character outside [0-9a-f], so a hex digest can never spell one by chance.
FeatureTable random_table(Rng &rng, std::size_t max_rows, std::size_t max_cols) {
    static constexpr char alphabet[] = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ./:_-$ ";
    const auto cols = 1 + rng.below(max_cols);
    const auto rows = rng.below(max_rows + 1);
    std::vector<Column> columns;
    std::set<std::string> excluded;
    for (std::size_t c = 0; c < cols; ++c) {
        std::string name = "col" + std::to_string(c) + ".";
        const auto extra = rng.below(6);
        for (std::uint64_t k = 0; k < extra; ++k) name.push_back("abcxyz_."[rng.below(8)]);
        columns.push_back({name, "L", ValueKind::string});
        if (rng.below(5) == 0) excluded.insert(name);
    }
    std::vector<Record> data;
    for (std::size_t r = 0; r < rows; ++r) {
        Record row;
        for (std::size_t c = 0; c < cols; ++c) {
            std::string v;
            const auto len = rng.below(12);
            for (std::uint64_t k = 0; k < len; ++k) v.push_back(alphabet[rng.below(sizeof alphabet - 1)]);
            v.push_back("ghijklmnopqrstuvwxyz./:_"[rng.below(24)]);
            if (rng.below(4) == 0) v = "0";
            row.push_back(v);
        }
        data.push_back(std::move(row));
    }
    return FeatureTable(FeatureSchema(columns, excluded), std::move(data));
}

std::string ascii_upper(std::string s) {
    for (auto &c : s) {
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
    return s;
}

Outcome criterion_1() {
    Outcome o;
    const auto t0 = Clock::now();
    Rng rng(101);
    std::size_t cells = 0;
    for (int t = 0; t < 100; ++t) {
        auto table = random_table(rng, 10, 10);
        auto got = ppfle::encode_table(table);
        // Brute force: every retained cell, in column order, through libsodium.
        std::vector<std::vector<std::string>> expected;
        for (const auto &row : table.rows()) {
            std::vector<std::string> line;
            for (std::size_t c = 0; c < table.num_columns(); ++c) {
                const auto &name = table.schema().columns()[c].name;
                if (table.schema().excluded().count(name)) continue;
                line.push_back(test::reference_sha256(ascii_upper(name) + "$" + row[c]));
                ++cells;
            }
            expected.push_back(line);
        }
        o.require(got.lines.size() == expected.size(), "line count differs in table " + std::to_string(t));
        for (std::size_t i = 0; i < std::min(got.lines.size(), expected.size()); ++i) {
            o.require(got.lines[i].digests == expected[i], "digest mismatch in table " + std::to_string(t));
        }
    }
    const double s = seconds_since(t0);
    o.require(s < 5.0, "took " + std::to_string(s) + " s");
    o.detail << (o.pass ? "" : " | ") << "100 tables, " << cells << " cells exact, " << s << " s";
    return o;
}

Outcome criterion_2() {
    Outcome o;
    const auto t0 = Clock::now();
    Rng rng(202);
    std::size_t values_checked = 0;
    for (int t = 0; t < 1000; ++t) {
        auto table = random_table(rng, 10, 10);
        auto data = ppfle::encode_table(table);
        const auto corpus = ppfle::format_corpus(data);
        std::set<std::size_t> counts, lengths;
        for (const auto &line : data.lines) {
            counts.insert(line.digests.size());
            lengths.insert(line.render().size());
        }
        o.require(counts.size() <= 1 && lengths.size() <= 1, "unequal line lengths in table " + std::to_string(t));
        for (const auto &row : table.rows()) {
            for (const auto &v : row) {
                if (v.size() < 4) continue;
                ++values_checked;
                o.require(corpus.find(v) == std::string::npos, "raw value '" + v + "' leaked");
            }
        }
    }
    const double s = seconds_since(t0);
    o.require(s < 30.0, "took " + std::to_string(s) + " s");
    o.detail << (o.pass ? "" : " | ") << "1000 tables fixed-length, " << values_checked << " raw values absent, " << s
             << " s";
    return o;
}

std::vector<std::string> hashed_lines(std::size_t n, std::uint64_t seed) {
    auto table = generate_synthetic((n + 14) / 15, 15, edge_iiot_schema(), seed);
    auto data = ppfle::encode_table(table, ppfle::HashConfig{"sha256", 8});
    auto lines = render_lines(data);
    lines.resize(n);
    return lines;
}

Outcome criterion_3() {
    using namespace tokenizer;
    Outcome o;
    const auto t0 = Clock::now();
    auto lines = hashed_lines(12001, 303);
    auto tok = train_bbpe(std::span<const std::string>(lines.data(), 3000), {1000, 2});

    Rng rng(304);
    std::size_t unk = 0, mismatched = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string s;
        const auto n = rng.below(65);
        for (std::uint64_t k = 0; k < n; ++k) s.push_back(static_cast<char>(rng.below(256)));
        const auto ids = tok.tokenize(s);
        unk += static_cast<std::size_t>(std::count(ids.begin(), ids.end(), kUnkId));
        if (tok.decode(ids) != s) ++mismatched;
    }
    o.require(unk == 0, std::to_string(unk) + " <unk> tokens");
    o.require(mismatched == 0, std::to_string(mismatched) + " strings did not decode back");

    const auto whole = encode_chunked(tok, lines, lines.size(), 512);
    o.require(whole.rows == 12001, "unchunked batch has " + std::to_string(whole.rows) + " rows");
    for (std::size_t chunk : {1u, 7u, 5000u}) {
        o.require(encode_chunked(tok, lines, chunk, 512) == whole, "chunk size " + std::to_string(chunk) + " differs");
    }

    test::TempDir dir;
    save_tokenizer(tok, dir.file("tok"));
    const auto back = load_tokenizer(dir.file("tok"));
    o.require(back == tok, "reloaded tokenizer differs");
    o.require(encode_chunked(back, lines, 5000, 512) == whole, "reloaded tokenizer encodes differently");

    const double s = seconds_since(t0);
    o.require(s < 60.0, "took " + std::to_string(s) + " s");
    o.detail << (o.pass ? "" : " | ") << "10^4 random strings, 0 <unk>; chunks {1,7,5000} == unchunked on 12001 lines; "
             << "round-trip identical; " << tok.size() << " tokens; " << s << " s";
    return o;
}

tokenizer::EncodedBatch random_batch(Rng &rng, std::size_t rows, std::size_t seq_len, std::size_t vocab) {
    tokenizer::EncodedBatch b;
    b.rows = rows;
    b.seq_len = seq_len;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto real = 2 + rng.below(seq_len - 1);
        for (std::size_t i = 0; i < seq_len; ++i) {
            const bool on = i < real;
            b.input_ids.push_back(on ? static_cast<tokenizer::TokenId>(i == 0 ? 0 : 5 + rng.below(vocab - 5))
                                     : tokenizer::kPadId);
            b.attention_mask.push_back(on ? 1 : 0);
        }
    }
    return b;
}

Outcome criterion_4() {
    Outcome o;
    const auto t0 = Clock::now();
    ModelConfig c = test::toy_config();
    auto model = Classifier::build(c, 401).cast<double>();
    Rng rng(402);
    model.params().visit([&](const std::string &, Mat<double> &m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.1 * rng.normal();
    });
    auto batch = random_batch(rng, 4, 8, c.vocab_size);
    std::vector<int> labels = {0, 1, 2, 1};

    // Relative error |a - n| / max(|a|, |n|, 1e-7) over every parameter. The
    // floor only matters for entries that are zero up to round-off (cropped or
    // masked positions); for those the central difference must also vanish.
    double worst_rel = 0.0, worst_zero = 0.0;
    std::size_t checked = 0, near_zero = 0;
    for (bool crop : {true, false}) {
        ForwardOptions opts;
        opts.crop_padding = crop;
        Params<double> grads;
        model.loss_and_grads(batch, labels, opts, &grads);
        std::vector<const Mat<double> *> g;
        grads.visit([&](const std::string &, const Mat<double> &m) { g.push_back(&m); });
        std::size_t t = 0;
        model.params().visit([&](const std::string &, Mat<double> &p) {
            const auto &gt = *g[t++];
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                const double saved = p.data()[i];
                const double eps = 1e-5;
                p.data()[i] = saved + eps;
                const double up = model.loss_and_grads(batch, labels, opts, nullptr);
                p.data()[i] = saved - eps;
                const double down = model.loss_and_grads(batch, labels, opts, nullptr);
                p.data()[i] = saved;
                const double numeric = (up - down) / (2 * eps);
                const double analytic = gt.data()[i];
                const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
                worst_rel = std::max(worst_rel, std::abs(numeric - analytic) / scale);
                if (std::abs(analytic) < 1e-15) {
                    worst_zero = std::max(worst_zero, std::abs(numeric));
                    ++near_zero;
                }
                ++checked;
            }
        });
    }
    o.require(worst_rel < 1e-3, "gradient relative error " + std::to_string(worst_rel));
    o.require(worst_zero < 1e-9, "numeric gradient " + std::to_string(worst_zero) + " where the analytic one vanishes");

    auto fmodel = Classifier::build([] {
        auto k = test::toy_config();
        k.n_classes = 15;
        return k;
    }(), 403);
    double worst_sum = 0.0, worst_pad = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        auto b = random_batch(rng, 8, 12, 64);
        auto out = fmodel.forward(b);
        for (Eigen::Index r = 0; r < out.probabilities.rows(); ++r) {
            worst_sum = std::max(worst_sum, std::abs(double(out.probabilities.row(r).sum()) - 1.0));
        }
        // Same rows with 20 more padding positions and junk ids under the mask.
        tokenizer::EncodedBatch padded;
        padded.rows = b.rows;
        padded.seq_len = b.seq_len + 20;
        for (std::size_t r = 0; r < b.rows; ++r) {
            for (std::size_t i = 0; i < padded.seq_len; ++i) {
                const bool inside = i < b.seq_len && b.mask_row(r)[i];
                padded.input_ids.push_back(inside ? b.ids_row(r)[i] : static_cast<tokenizer::TokenId>(5 + rng.below(59)));
                padded.attention_mask.push_back(inside ? 1 : 0);
            }
        }
        ForwardOptions masked;
        masked.crop_padding = false;
        for (const auto &opts : {ForwardOptions{}, masked}) {
            auto other = fmodel.forward(padded, opts);
            worst_pad = std::max(worst_pad, double((other.logits - out.logits).cwiseAbs().maxCoeff()));
        }
    }
    o.require(worst_sum <= 1e-6, "softmax row sum off by " + std::to_string(worst_sum));
    o.require(worst_pad <= 1e-5, "padding changed logits by " + std::to_string(worst_pad));

    const double s = seconds_since(t0);
    o.require(s < 60.0, "took " + std::to_string(s) + " s");
    o.detail << (o.pass ? "" : " | ") << checked << " gradient entries, worst rel " << worst_rel << " ("
             << near_zero << " structurally zero, max |numeric| " << worst_zero << "), |softmax sum - 1| <= " << worst_sum << ", pad drift " << worst_pad << ", " << s << " s";
    return o;
}

std::size_t enumerate_shapes(const ModelConfig &c) {
    const auto H = c.hidden, I = c.intermediate;
    std::vector<std::pair<std::size_t, std::size_t>> shapes = {
        {c.vocab_size, H}, {c.max_position, H}, {c.type_vocab, H}, {1, H}, {1, H}};
    for (std::size_t l = 0; l < c.layers; ++l) {
        for (int k = 0; k < 4; ++k) {
            shapes.push_back({H, H});
            shapes.push_back({1, H});
        }
        shapes.insert(shapes.end(), {{1, H}, {1, H}, {H, I}, {1, I}, {I, H}, {1, H}, {1, H}, {1, H}});
    }
    shapes.insert(shapes.end(), {{H, H}, {1, H}, {H, c.n_classes}, {1, c.n_classes}});
    std::size_t total = 0;
    for (auto [r, k] : shapes) total += r * k;
    return total;
}

Outcome criterion_5() {
    Outcome o;
    Rng rng(505);
    test::TempDir dir;
    double lo = INFINITY, hi = 0;
    for (int i = 0; i < 5; ++i) {
        ModelConfig c;
        c.heads = 1 + rng.below(4);
        c.hidden = c.heads * (2 + rng.below(10));
        c.layers = 1 + rng.below(4);
        c.vocab_size = 100 + rng.below(2000);
        c.intermediate = 8 + rng.below(100);
        c.max_position = 16 + rng.below(200);
        c.n_classes = 2 + rng.below(14);
        auto model = Classifier::build(c, rng.next());
        const auto expected = enumerate_shapes(c);
        o.require(model.parameter_count() == expected && parameter_count(c) == expected,
                  "count " + std::to_string(model.parameter_count()) + " vs " + std::to_string(expected));
        save_checkpoint(model, dir.file("m.ckpt"));
        const double size = double(std::filesystem::file_size(dir.file("m.ckpt")));
        const double ratio = size / double(4 * expected + checkpoint_header_bytes(model));
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
        o.require(ratio >= 1.0 && ratio <= 1.1, "checkpoint ratio " + std::to_string(ratio));
    }
    o.detail << (o.pass ? "" : " | ") << "5 configs match shape enumeration; checkpoint/(4P+header) in [" << lo << ", "
             << hi << "]";
    return o;
}

Outcome criterion_7() {
    Outcome o;
    const std::vector<int> y_true = {0, 0, 0, 1, 1, 1, 2, 2, 2};
    const std::vector<int> y_pred = {0, 0, 0, 1, 0, 2, 2, 2, 1};
    auto r = classification_report(y_true, y_pred, nullptr, 3, {"a", "b", "c"});
    // Hand count: confusion rows [3 0 0], [1 1 1], [0 1 2].
    const double expect[3][3] = {{3.0 / 4, 1.0, 6.0 / 7}, {1.0 / 2, 1.0 / 3, 2.0 / 5}, {2.0 / 3, 2.0 / 3, 2.0 / 3}};
    o.require(r.confusion == ConfusionMatrix{{3, 0, 0}, {1, 1, 1}, {0, 1, 2}}, "confusion matrix");
    for (int k = 0; k < 3; ++k) {
        const auto &m = r.classes[static_cast<std::size_t>(k)];
        o.require(std::abs(m.precision - expect[k][0]) <= 1e-15 && std::abs(m.recall - expect[k][1]) <= 1e-15 &&
                      std::abs(m.f1 - expect[k][2]) <= 1e-15 && m.support == 3,
                  "class " + std::to_string(k));
    }
    o.require(std::abs(r.accuracy - 2.0 / 3) <= 1e-15, "accuracy");
    o.require(std::abs(r.macro.precision - 23.0 / 36) <= 1e-15 && std::abs(r.macro.f1 - 202.0 / 315) <= 1e-15,
              "macro average");

    Rng rng(707);
    double worst = 0;
    int fixtures = 0;
    while (fixtures < 500) {
        std::vector<int> y(6);
        std::vector<double> s(6);
        for (auto &v : y) v = static_cast<int>(rng.below(2));
        for (auto &v : s) v = double(rng.below(5)) / 4.0;
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == 6) continue;
        double wins = 0;
        int pairs = 0;
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                if (y[static_cast<std::size_t>(i)] == 1 && y[static_cast<std::size_t>(j)] == 0) {
                    ++pairs;
                    const double a = s[static_cast<std::size_t>(i)], b = s[static_cast<std::size_t>(j)];
                    wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
                }
            }
        }
        worst = std::max(worst, std::abs(roc_auc(y, s) - wins / pairs));
        ++fixtures;
    }
    o.require(worst <= 1e-12, "AUC differs by " + std::to_string(worst));

    const std::vector<int> t2 = {0, 0, 1, 1, 2, 2};
    const std::vector<int> p2 = {0, 0, 1, 1, 0, 1};
    auto d = classification_report(t2, p2, nullptr, 3);
    o.require(d.classes[2].precision == 0 && d.classes[2].recall == 0 && d.classes[2].f1 == 0,
              "never-predicted class is not 0/0/0");
    o.detail << (o.pass ? "" : " | ") << "9-sample fixture exact; 500 six-sample AUC fixtures within " << worst
             << "; never-predicted class 0/0/0";
    return o;
}

Outcome criterion_8() {
    Outcome o;
    std::ostringstream summary;
    for (double alpha : {2.0, 2.5, 4.0}) {
        int hits = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(mix_seed(808, seed));
            std::vector<double> x(1000);
            for (auto &v : x) v = std::pow(1.0 - rng.uniform(), -1.0 / (alpha - 1.0));
            const auto fit = fit_power_law(x, 5);
            if (std::abs(fit.alpha - alpha) <= 0.1 * alpha) ++hits;
        }
        o.require(hits >= 18, "alpha " + std::to_string(alpha) + ": " + std::to_string(hits) + "/20");
        summary << (alpha == 2.0 ? "" : ", ") << "alpha " << alpha << ": " << hits << "/20";
    }
    o.detail << (o.pass ? "" : " | ") << summary.str() << " within 10%";
    return o;
}

Outcome criterion_9() {
    Outcome o;
    auto lines = hashed_lines(300, 909);
    auto tok = tokenizer::train_bbpe(lines, {500, 2});
    auto c = test::toy_config();
    c.vocab_size = 500;
    c.max_position = 128;
    auto model = Classifier::build(c, 910);
    auto r = bench_inference(model, tok, lines[0], 1000, 10, 128);
    o.require(r.n_runs == 1000, "n_runs");
    o.require(r.mean_seconds > 0 && r.p50_seconds > 0 && r.p95_seconds >= r.p50_seconds, "order statistics");
    o.detail << (o.pass ? "" : " | ") << "1000 runs on " << r.hardware << ": mean " << r.mean_seconds * 1e6
             << " us, p50 " << r.p50_seconds * 1e6 << " us, p95 " << r.p95_seconds * 1e6 << " us";
    return o;
}

EndToEndResult desk_run() {
    auto cfg = desk_config();
    cfg.seed = 606;
    cfg.propagate_seed();
    return run_synthetic(cfg, 500);
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char *title, const std::function<Outcome()> &fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception &e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << o.detail.str()
                  << std::endl;
        return o.pass;
    };

    report(1, "hashed encoding vs reference digests", criterion_1);
    report(2, "fixed length and no raw values in corpus", criterion_2);
    report(3, "tokenizer coverage, chunking, persistence", criterion_3);
    report(4, "model numerics", criterion_4);
    report(5, "parameter accounting and checkpoint size", criterion_5);

    std::optional<EndToEndResult> first;
    report(6, "desk-scale end-to-end learning", [&] {
        Outcome o;
        first = desk_run();
        const auto cfg = desk_config();
        std::ostringstream curve;
        for (const auto &r : first->history.records) {
            if (r.split == "eval") curve << (curve.tellp() ? " " : "") << r.accuracy;
        }
        o.require(first->eval_accuracy >= 0.95, "eval accuracy " + std::to_string(first->eval_accuracy));
        o.require(cfg.train.epochs <= 10, "more than 10 epochs");
        o.require(first->seconds < 600.0, "took " + std::to_string(first->seconds) + " s");
        o.detail << (o.pass ? "" : " | ") << "eval accuracy " << first->eval_accuracy << " after "
                 << cfg.train.epochs << " epochs (per epoch: " << curve.str() << "), " << first->report.total
                 << " held-out rows, " << first->tokenizer.size() << " tokens, " << first->seconds << " s";
        return o;
    });

    report(7, "metrics fixtures", criterion_7);
    report(8, "power-law exponent recovery", criterion_8);
    report(9, "latency harness", criterion_9);

    report(10, "determinism of the end-to-end run", [&] {
        Outcome o;
        if (!first) first = desk_run();
        const auto second = desk_run();
        o.require(second.train_corpus == first->train_corpus && second.eval_corpus == first->eval_corpus,
                  "corpus bytes differ");
        o.require(second.tokenizer.merges() == first->tokenizer.merges(), "merges differ");
        o.require(second.eval_accuracy == first->eval_accuracy, "eval accuracy differs");
        o.require(second.history == first->history, "training history differs");
        o.detail << (o.pass ? "" : " | ") << "corpus (" << first->train_corpus.size() + first->eval_corpus.size()
                 << " bytes), " << first->tokenizer.merges().size() << " merges and accuracy "
                 << first->eval_accuracy << " identical across runs";
        return o;
    });

    std::cout << (failures == 0 ? "all 10 criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures;
}
