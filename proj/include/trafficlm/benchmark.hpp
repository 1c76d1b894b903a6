#pragma once

#include <string>

#include "trafficlm/model.hpp"
#include "trafficlm/tokenizer.hpp"

namespace trafficlm {

struct LatencyReport {
    std::string hardware;
    std::size_t n_runs = 0;
    std::size_t warmup_runs = 0;
    double mean_seconds = 0.0;
    double p50_seconds = 0.0;
    double p95_seconds = 0.0;
    double min_seconds = 0.0;
    double max_seconds = 0.0;
    /// Whether the timed region could use more than one thread.
    bool parallel = false;
    /// Tokenization is inside the timed region.
    bool includes_tokenization = true;

    std::string to_json() const;
};

/// CPU model from /proc/cpuinfo (or "unknown") plus logical core count.
std::string hardware_description();

/// Times `n_runs` single-sample encode + forward passes after `warmup`
/// untimed ones (at least 10). Percentiles use the nearest-rank rule.
LatencyReport bench_inference(const Classifier &model, const tokenizer::TokenizerModel &tok,
                              const std::string &sample_line, std::size_t n_runs = 1000, std::size_t warmup = 10,
                              std::size_t max_len = 512);

}  // namespace trafficlm
