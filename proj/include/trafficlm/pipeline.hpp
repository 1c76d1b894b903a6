#pragma once

#include <string>
#include <vector>

#include "trafficlm/config.hpp"
#include "trafficlm/ingest.hpp"
#include "trafficlm/metrics.hpp"
#include "trafficlm/ppfle.hpp"
#include "trafficlm/tokenizer.hpp"
#include "trafficlm/training.hpp"

namespace trafficlm {

/// Class indices for class-name labels; UnknownLabel for names outside the
/// 15-class set.
std::vector<int> label_indices(const std::vector<std::string> &labels);

/// Encodes corpus lines and pairs them with label indices.
Dataset make_dataset(const tokenizer::TokenizerModel &tok, const std::vector<std::string> &lines,
                     const std::vector<std::string> &labels, std::size_t max_len, std::size_t chunk_size);

std::vector<std::string> render_lines(const ppfle::DataList &data);

/// Everything a full in-memory run produces.
struct EndToEndResult {
    std::string train_corpus;  // rendered corpus bytes
    std::string eval_corpus;
    tokenizer::TokenizerModel tokenizer;
    Classifier model;
    TrainHistory history;
    EvalReport report;
    double eval_accuracy = 0.0;
    double seconds = 0.0;
};

/// Synthetic table -> stratified split -> hashing -> tokenizer -> training
/// -> evaluation, all under `config.seed`.
EndToEndResult run_synthetic(const PipelineConfig &config, std::size_t samples_per_class,
                             const RecordCallback &on_record = {});

/// Same pipeline on a labeled table already in memory.
EndToEndResult run_end_to_end(const FeatureTable &table, const PipelineConfig &config,
                              const RecordCallback &on_record = {});

}  // namespace trafficlm
