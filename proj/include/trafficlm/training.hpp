#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trafficlm/model.hpp"

namespace trafficlm {

struct TrainConfig {
    std::size_t epochs = 4;
    std::size_t batch_size = 128;
    /// Paper-scale default; the desk preset uses 1e-3.
    double learning_rate = 2e-5;
    /// "adam" or "sgd".
    std::string optimizer = "adam";
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
    std::uint64_t seed = 0;
    /// Evaluate every this many steps in addition to each epoch end; 0 = epoch ends only.
    std::size_t eval_every = 0;
    /// Worker threads for the gradient computation. Results do not depend on it.
    std::size_t threads = 1;

    void validate() const;
};

/// Encoded inputs with class indices.
struct Dataset {
    tokenizer::EncodedBatch inputs;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

struct HistoryRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string split;  // "train" or "eval"
    double loss = 0.0;
    double accuracy = 0.0;

    bool operator==(const HistoryRecord &) const = default;
};

struct TrainHistory {
    std::vector<HistoryRecord> records;

    /// Last record of the given split; nullptr when there is none.
    const HistoryRecord *last(const std::string &split) const;
    /// Header "step,epoch,split,loss,accuracy", one row per record.
    std::string to_csv() const;
    void write_csv(const std::string &path) const;

    bool operator==(const TrainHistory &) const = default;
};

struct LossAndGrads {
    float loss = 0.0f;
    Params<float> grads;
};

/// Mean cross-entropy and its gradient; dropout active under `opts.train`.
LossAndGrads loss_and_grads(const Classifier &model, const tokenizer::EncodedBatch &batch,
                            std::span<const int> labels, const ForwardOptions &opts = {});

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(Params<float> &params, const Params<float> &grads) = 0;
};

/// "adam" or "sgd"; BadConfig otherwise.
std::unique_ptr<Optimizer> make_optimizer(const TrainConfig &config, const Params<float> &like);

struct TrainResult {
    Classifier model;
    TrainHistory history;
};

using RecordCallback = std::function<void(const HistoryRecord &)>;

/// Mini-batch training: shuffles under the seed every epoch, logs the loss
/// and accuracy of each step, and evaluates on `eval` (when non-empty) at
/// epoch ends and every `eval_every` steps. Throws NonFiniteLoss with step,
/// learning rate and gradient norm when the loss or gradient stops being finite.
TrainResult train(Classifier model, const Dataset &train_data, const Dataset &eval_data, const TrainConfig &config,
                  const RecordCallback &on_record = {});

struct Predictions {
    std::vector<int> classes;
    Mat<float> probabilities;  // [n, n_classes]
};

/// Eval-mode forward in batches; argmax with ties going to the lowest index.
Predictions predict(const Classifier &model, const tokenizer::EncodedBatch &inputs, std::size_t batch_size = 256);

/// Index of the largest value; the first one on ties.
int argmax(std::span<const float> values);

/// Eval-mode mean loss and accuracy.
HistoryRecord evaluate(const Classifier &model, const Dataset &data, std::size_t batch_size = 256);

}  // namespace trafficlm
