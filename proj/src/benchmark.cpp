#include "trafficlm/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "trafficlm/error.hpp"

namespace trafficlm {

std::string hardware_description() {
    std::string model = "unknown";
    std::ifstream in("/proc/cpuinfo");
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) {
                model = line.substr(colon + 1);
                model.erase(0, model.find_first_not_of(" \t"));
            }
            break;
        }
    }
    return model + " (" + std::to_string(std::thread::hardware_concurrency()) + " logical cores)";
}

LatencyReport bench_inference(const Classifier &model, const tokenizer::TokenizerModel &tok,
                              const std::string &sample_line, std::size_t n_runs, std::size_t warmup,
                              std::size_t max_len) {
    if (n_runs < 1) throw BadConfig("n_runs must be >= 1");
    warmup = std::max<std::size_t>(warmup, 10);
    max_len = std::min(max_len, model.config().max_position);

    float sink = 0.0f;
    auto once = [&] {
        const auto enc = tokenizer::encode_line(tok, sample_line, max_len);
        tokenizer::EncodedBatch batch;
        batch.rows = 1;
        batch.seq_len = max_len;
        batch.input_ids = enc.ids;
        batch.attention_mask = enc.mask;
        sink += model.forward(batch).probabilities(0, 0);
    };
    for (std::size_t i = 0; i < warmup; ++i) once();

    std::vector<double> times(n_runs);
    for (auto &t : times) {
        const auto start = std::chrono::steady_clock::now();
        once();
        t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (!std::isfinite(sink)) throw NonFiniteLoss("benchmark forward produced non-finite probabilities");

    LatencyReport report;
    report.hardware = hardware_description();
    report.n_runs = n_runs;
    report.warmup_runs = warmup;
    report.mean_seconds = std::accumulate(times.begin(), times.end(), 0.0) / double(n_runs);
    std::sort(times.begin(), times.end());
    auto rank = [&](double q) {
        const auto k = static_cast<std::size_t>(std::ceil(q * double(n_runs)));
        return times[std::clamp<std::size_t>(k, 1, n_runs) - 1];
    };
    report.p50_seconds = rank(0.50);
    report.p95_seconds = rank(0.95);
    report.min_seconds = times.front();
    report.max_seconds = times.back();
    report.parallel = false;  // forward runs on the calling thread
    return report;
}

std::string LatencyReport::to_json() const {
    return nlohmann::json{{"hardware", hardware},
                          {"n_runs", n_runs},
                          {"warmup_runs", warmup_runs},
                          {"mean_seconds", mean_seconds},
                          {"p50_seconds", p50_seconds},
                          {"p95_seconds", p95_seconds},
                          {"min_seconds", min_seconds},
                          {"max_seconds", max_seconds},
                          {"parallel", parallel},
                          {"includes_tokenization", includes_tokenization}}
        .dump(2);
}

}  // namespace trafficlm
