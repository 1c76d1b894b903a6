#include <doctest.h>

#include <json.hpp>

#include "support.hpp"
#include "trafficlm/benchmark.hpp"
#include "trafficlm/ppfle.hpp"

using namespace trafficlm;

TEST_CASE("latency report order statistics") {
    auto table = generate_synthetic(2, 15, edge_iiot_schema(), 1);
    auto data = ppfle::encode_table(table, ppfle::HashConfig{"sha256", 8});
    std::vector<std::string> lines;
    for (const auto &l : data.lines) lines.push_back(l.render());
    auto tok = tokenizer::train_bbpe(lines, {300, 2});
    auto cfg = test::toy_config();
    cfg.vocab_size = 300;
    cfg.max_position = 64;
    auto model = Classifier::build(cfg, 2);

    auto r = bench_inference(model, tok, lines[0], 50, 0, 64);
    CHECK(r.n_runs == 50);
    CHECK(r.warmup_runs == 10);
    CHECK(r.min_seconds > 0);
    CHECK(r.p50_seconds >= r.min_seconds);
    CHECK(r.p95_seconds >= r.p50_seconds);
    CHECK(r.max_seconds >= r.p95_seconds);
    CHECK(r.mean_seconds >= r.min_seconds);
    CHECK(r.mean_seconds <= r.max_seconds);
    CHECK(r.includes_tokenization);
    CHECK_FALSE(r.parallel);
    CHECK_FALSE(r.hardware.empty());

    auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["n_runs"] == 50);
    CHECK(j["p95_seconds"].get<double>() == r.p95_seconds);
    CHECK(j.contains("hardware"));
}
