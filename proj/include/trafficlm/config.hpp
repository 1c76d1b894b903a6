#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "trafficlm/model.hpp"
#include "trafficlm/ppfle.hpp"
#include "trafficlm/schema.hpp"
#include "trafficlm/tokenizer.hpp"
#include "trafficlm/training.hpp"

namespace trafficlm {

struct PathsConfig {
    std::string corpus;
    std::string labels;
    std::string eval_corpus;
    std::string eval_labels;
    std::string tokenizer_dir;
    std::string checkpoint;
    std::string history;
    std::string report_dir;
};

/// Settings for every pipeline stage. Loaded from a JSON document whose
/// top-level keys mirror the members (sections "hash", "tokenizer", "model",
/// "train", "paths"); command-line flags override file values.
struct PipelineConfig {
    std::uint64_t seed = 0;
    /// Schema file; empty selects the built-in Edge-IIoTset schema.
    std::string schema;
    /// Replaces the schema's exclusion set when present.
    std::optional<std::set<std::string>> exclusions;
    std::string label_column = "Attack_type";
    double train_ratio = 0.8;
    double window_seconds = 1.0;

    ppfle::HashConfig hash;
    tokenizer::TokenizerConfig tokenizer;
    std::size_t max_len = 512;
    std::size_t chunk_size = 5000;
    ModelConfig model;
    TrainConfig train;
    PathsConfig paths;

    /// BadConfig naming the offending key.
    void validate() const;
    /// Copies `seed` into the stages that take one.
    void propagate_seed();
};

/// Defaults overridden by the keys present in `text`. Unknown keys and
/// wrongly typed values raise BadConfig naming the key.
PipelineConfig parse_pipeline_config(const std::string &text);
PipelineConfig load_pipeline_config(const std::string &path);
std::string format_pipeline_config(const PipelineConfig &config);

/// Schema file (or the built-in one) with the configured exclusions.
FeatureSchema resolve_schema(const PipelineConfig &config);

/// Small settings for learning the synthetic 15-class task on a laptop CPU:
/// 1000-token vocabulary, hidden 64, 2 layers.
PipelineConfig desk_config();

}  // namespace trafficlm
