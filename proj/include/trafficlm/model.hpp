#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trafficlm/tokenizer.hpp"

namespace trafficlm {

struct ModelConfig {
    std::size_t vocab_size = 5000;
    std::size_t hidden = 128;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t intermediate = 512;
    std::size_t max_position = 512;
    std::size_t type_vocab = 2;
    double dropout = 0.1;
    std::size_t n_classes = 15;

    /// BadConfig on zero sizes, hidden % heads != 0, or dropout outside [0, 1).
    void validate() const;
    std::size_t head_dim() const { return hidden / heads; }
    bool operator==(const ModelConfig &) const = default;
};

/// Closed-form trainable parameter count:
///   embeddings  V*H + P*H + T*H + 2H
///   per layer   4H^2 + 4H (attention) + 2H (LN) + 2HI + I + H (FFN) + 2H (LN)
///   pooler      H^2 + H
///   classifier  H*C + C
std::size_t parameter_count(const ModelConfig &config);

/// Human-readable configuration table.
std::string model_summary(const ModelConfig &config);

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Linear weights are stored in x out so that y = x W + b; biases and
/// layernorm vectors are 1 x n.
template <class T>
struct LayerParams {
    Mat<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    Mat<T> ln1_g, ln1_b;
    Mat<T> ff1_w, ff1_b, ff2_w, ff2_b;
    Mat<T> ln2_g, ln2_b;
};

template <class T>
struct Params {
    Mat<T> word, position, token_type, emb_ln_g, emb_ln_b;
    std::vector<LayerParams<T>> layers;
    Mat<T> pool_w, pool_b, cls_w, cls_b;

    /// Calls f(name, tensor) for every tensor in a fixed order.
    template <class F>
    void visit(F &&f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit(F &&f) const {
        visit_impl(*this, f);
    }

    /// Same shapes, all zeros.
    Params zeros_like() const;
    void set_zero();
    /// this += other, tensor by tensor.
    void add(const Params &other);
    void scale(T factor);
    std::size_t size() const;

private:
    template <class Self, class F>
    static void visit_impl(Self &p, F &f) {
        f(std::string("embeddings.word_embeddings.weight"), p.word);
        f(std::string("embeddings.position_embeddings.weight"), p.position);
        f(std::string("embeddings.token_type_embeddings.weight"), p.token_type);
        f(std::string("embeddings.LayerNorm.weight"), p.emb_ln_g);
        f(std::string("embeddings.LayerNorm.bias"), p.emb_ln_b);
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            auto &L = p.layers[l];
            const auto pre = "encoder.layer." + std::to_string(l) + ".";
            f(pre + "attention.self.query.weight", L.q_w);
            f(pre + "attention.self.query.bias", L.q_b);
            f(pre + "attention.self.key.weight", L.k_w);
            f(pre + "attention.self.key.bias", L.k_b);
            f(pre + "attention.self.value.weight", L.v_w);
            f(pre + "attention.self.value.bias", L.v_b);
            f(pre + "attention.output.dense.weight", L.o_w);
            f(pre + "attention.output.dense.bias", L.o_b);
            f(pre + "attention.output.LayerNorm.weight", L.ln1_g);
            f(pre + "attention.output.LayerNorm.bias", L.ln1_b);
            f(pre + "intermediate.dense.weight", L.ff1_w);
            f(pre + "intermediate.dense.bias", L.ff1_b);
            f(pre + "output.dense.weight", L.ff2_w);
            f(pre + "output.dense.bias", L.ff2_b);
            f(pre + "output.LayerNorm.weight", L.ln2_g);
            f(pre + "output.LayerNorm.bias", L.ln2_b);
        }
        f(std::string("pooler.dense.weight"), p.pool_w);
        f(std::string("pooler.dense.bias"), p.pool_b);
        f(std::string("classifier.weight"), p.cls_w);
        f(std::string("classifier.bias"), p.cls_b);
    }
};

struct ForwardOptions {
    /// Enables dropout. Masks are drawn from mix_seed(seed, row).
    bool train = false;
    std::uint64_t seed = 0;
    /// Drop trailing masked positions before the encoder. Exact under the
    /// additive mask; off only to exercise the masked path in tests.
    bool crop_padding = true;
};

template <class T>
struct ForwardOutput {
    Mat<T> logits;         // [batch, n_classes]
    Mat<T> probabilities;  // row-wise softmax of logits
    Mat<T> pooled;         // [batch, hidden]
};

/// Compact BERT-style sequence classifier (post-layernorm encoder, first
/// token pooler, linear head). Token type ids are all zero in this pipeline.
template <class T>
class BasicClassifier {
public:
    using Matrix = Mat<T>;
    using TokenId = tokenizer::TokenId;

    BasicClassifier() = default;
    /// Weights ~ N(0, 0.02^2), biases 0, layernorm gains 1; deterministic in seed.
    static BasicClassifier build(const ModelConfig &config, std::uint64_t seed);
    /// Wraps existing tensors; ShapeMismatch when they disagree with config.
    BasicClassifier(ModelConfig config, Params<T> params);

    const ModelConfig &config() const { return config_; }
    Params<T> &params() { return params_; }
    const Params<T> &params() const { return params_; }
    /// Sum of tensor sizes actually held.
    std::size_t parameter_count() const { return params_.size(); }

    template <class U>
    BasicClassifier<U> cast() const;

    /// Word + position + type embeddings, layernorm, (dropout). One
    /// [seq, hidden] matrix per batch row.
    std::vector<Matrix> embed(const tokenizer::EncodedBatch &batch, const ForwardOptions &opts = {}) const;

    /// Self-attention sublayer of `layer` on one sequence, including output
    /// projection, residual and layernorm. `mask` has one entry per row of
    /// `hidden`. When `probs` is given it receives the per-head attention
    /// weights [seq, seq].
    Matrix attention(std::size_t layer, const Matrix &hidden, std::span<const std::uint8_t> mask,
                     std::vector<Matrix> *probs = nullptr) const;

    /// Feed-forward sublayer of `layer` (dense, GELU, dense, residual, layernorm).
    Matrix ffn(std::size_t layer, const Matrix &hidden) const;

    ForwardOutput<T> forward(const tokenizer::EncodedBatch &batch, const ForwardOptions &opts = {}) const;

    /// Mean cross-entropy over the batch. When `grads` is non-null it is
    /// overwritten with d(loss)/d(param). BadLabel for labels outside
    /// [0, n_classes). `logits`, when given, receives the batch logits.
    T loss_and_grads(const tokenizer::EncodedBatch &batch, std::span<const int> labels, const ForwardOptions &opts,
                     Params<T> *grads, std::size_t threads = 1, Matrix *logits = nullptr) const;

private:
    struct Cache;
    void check_batch(const tokenizer::EncodedBatch &batch) const;
    std::size_t effective_length(std::span<const std::uint8_t> mask, const ForwardOptions &opts) const;
    /// Logits row for one sequence; fills `cache` for backward when given.
    Matrix forward_row(std::span<const TokenId> ids, std::span<const std::uint8_t> mask, const ForwardOptions &opts,
                       std::uint64_t row_seed, Cache *cache, Matrix *pooled) const;
    void backward_row(const Cache &cache, const Matrix &dlogits, Params<T> &grads) const;

    ModelConfig config_;
    Params<T> params_;
};

using Classifier = BasicClassifier<float>;

/// Exact erf-based GELU and its derivative.
template <class T>
T gelu(T x);
template <class T>
T gelu_grad(T x);

/// Row-wise softmax.
template <class T>
Mat<T> softmax_rows(const Mat<T> &x);

}  // namespace trafficlm
