#include "trafficlm/model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "trafficlm/error.hpp"
#include "trafficlm/rng.hpp"

namespace trafficlm {

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char *name) {
        if (v == 0) throw BadConfig(std::string("model.") + name + " must be >= 1");
    };
    positive(vocab_size, "vocab_size");
    positive(hidden, "hidden");
    positive(layers, "layers");
    positive(heads, "heads");
    positive(intermediate, "intermediate");
    positive(max_position, "max_position");
    positive(type_vocab, "type_vocab");
    positive(n_classes, "n_classes");
    if (hidden % heads != 0) {
        throw BadConfig("model.hidden (" + std::to_string(hidden) + ") is not divisible by model.heads (" +
                        std::to_string(heads) + ")");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw BadConfig("model.dropout must be in [0, 1)");
}

std::size_t parameter_count(const ModelConfig &c) {
    const auto H = c.hidden, I = c.intermediate;
    const auto embeddings = c.vocab_size * H + c.max_position * H + c.type_vocab * H + 2 * H;
    const auto layer = 4 * H * H + 9 * H + 2 * H * I + I;
    const auto pooler = H * H + H;
    const auto classifier = H * c.n_classes + c.n_classes;
    return embeddings + c.layers * layer + pooler + classifier;
}

namespace {

std::string group_thousands(std::size_t n) {
    std::string digits = std::to_string(n);
    for (auto i = static_cast<std::ptrdiff_t>(digits.size()) - 3; i > 0; i -= 3) digits.insert(static_cast<std::size_t>(i), ",");
    return digits;
}

}  // namespace

std::string model_summary(const ModelConfig &c) {
    std::ostringstream out;
    auto row = [&](const std::string &name, const std::string &value) {
        out << std::left << std::setw(32) << name << value << '\n';
    };
    row("Vocabulary size", std::to_string(c.vocab_size));
    row("Hidden size", std::to_string(c.hidden));
    row("Number of hidden layers", std::to_string(c.layers));
    row("Number of attention heads", std::to_string(c.heads));
    row("Intermediate size", std::to_string(c.intermediate));
    row("Hidden activation", "gelu");
    row("Maximum position embeddings", std::to_string(c.max_position));
    row("Type vocabulary size", std::to_string(c.type_vocab));
    std::ostringstream dropout;
    dropout << c.dropout;
    row("Dropout", dropout.str());
    row("Number of classes", std::to_string(c.n_classes));
    row("Total number of parameters", group_thousands(parameter_count(c)));
    return out.str();
}

template <class T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <class T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
    return cdf + x * pdf;
}

template <class T>
Mat<T> softmax_rows(const Mat<T> &x) {
    Mat<T> out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T m = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

namespace {

template <class T>
std::vector<Mat<T> *> tensors(Params<T> &p) {
    std::vector<Mat<T> *> out;
    p.visit([&](const std::string &, Mat<T> &m) { out.push_back(&m); });
    return out;
}

template <class T>
std::vector<const Mat<T> *> tensors(const Params<T> &p) {
    std::vector<const Mat<T> *> out;
    p.visit([&](const std::string &, const Mat<T> &m) { out.push_back(&m); });
    return out;
}

template <class T>
Params<T> shaped(const ModelConfig &c) {
    using M = Mat<T>;
    const auto H = static_cast<Eigen::Index>(c.hidden);
    const auto I = static_cast<Eigen::Index>(c.intermediate);
    Params<T> p;
    p.word = M::Zero(static_cast<Eigen::Index>(c.vocab_size), H);
    p.position = M::Zero(static_cast<Eigen::Index>(c.max_position), H);
    p.token_type = M::Zero(static_cast<Eigen::Index>(c.type_vocab), H);
    p.emb_ln_g = M::Zero(1, H);
    p.emb_ln_b = M::Zero(1, H);
    p.layers.resize(c.layers);
    for (auto &L : p.layers) {
        for (auto *w : {&L.q_w, &L.k_w, &L.v_w, &L.o_w}) *w = M::Zero(H, H);
        for (auto *b : {&L.q_b, &L.k_b, &L.v_b, &L.o_b, &L.ln1_g, &L.ln1_b, &L.ff2_b, &L.ln2_g, &L.ln2_b}) {
            *b = M::Zero(1, H);
        }
        L.ff1_w = M::Zero(H, I);
        L.ff1_b = M::Zero(1, I);
        L.ff2_w = M::Zero(I, H);
    }
    p.pool_w = M::Zero(H, H);
    p.pool_b = M::Zero(1, H);
    p.cls_w = M::Zero(H, static_cast<Eigen::Index>(c.n_classes));
    p.cls_b = M::Zero(1, static_cast<Eigen::Index>(c.n_classes));
    return p;
}

bool ends_with(const std::string &s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

constexpr double kLayerNormEps = 1e-12;
constexpr double kMaskBias = -1e9;

template <class T>
Mat<T> layer_norm(const Mat<T> &x, const Mat<T> &g, const Mat<T> &b, Mat<T> *xhat_out, Mat<T> *rstd_out) {
    const auto n = x.cols();
    Mat<T> xhat(x.rows(), n);
    Mat<T> rstd(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mean = x.row(i).mean();
        const T var = (x.row(i).array() - mean).square().sum() / T(n);
        rstd(i, 0) = T(1) / std::sqrt(var + T(kLayerNormEps));
        xhat.row(i) = (x.row(i).array() - mean) * rstd(i, 0);
    }
    Mat<T> y = xhat.array().rowwise() * g.row(0).array();
    y.rowwise() += b.row(0);
    if (xhat_out) *xhat_out = std::move(xhat);
    if (rstd_out) *rstd_out = std::move(rstd);
    return y;
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T> &dy, const Mat<T> &xhat, const Mat<T> &rstd, const Mat<T> &g, Mat<T> &dg,
                           Mat<T> &db) {
    dg += dy.cwiseProduct(xhat).colwise().sum();
    db += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
    const T n = T(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T sum = dxhat.row(i).sum();
        const T dot = dxhat.row(i).dot(xhat.row(i));
        dx.row(i) = (rstd(i, 0) / n) * (n * dxhat.row(i).array() - sum - xhat.row(i).array() * dot).matrix();
    }
    return dx;
}

/// Inverted dropout in place; `mask` receives the per-element scale (0 or 1/(1-p)).
template <class T>
void dropout(Mat<T> &x, double p, Rng &rng, Mat<T> &mask) {
    mask.resize(x.rows(), x.cols());
    const T keep = T(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < x.size(); ++i) mask.data()[i] = rng.uniform() < p ? T(0) : keep;
    x = x.cwiseProduct(mask);
}

template <class T>
void add_bias(Mat<T> &x, const Mat<T> &b) {
    x.rowwise() += b.row(0);
}

}  // namespace

template <class T>
Params<T> Params<T>::zeros_like() const {
    Params out = *this;
    out.set_zero();
    return out;
}

template <class T>
void Params<T>::set_zero() {
    for (auto *m : tensors(*this)) m->setZero();
}

template <class T>
void Params<T>::add(const Params &other) {
    auto mine = tensors(*this);
    auto theirs = tensors(other);
    if (mine.size() != theirs.size()) throw ShapeMismatch("parameter sets differ in tensor count");
    for (std::size_t i = 0; i < mine.size(); ++i) *mine[i] += *theirs[i];
}

template <class T>
void Params<T>::scale(T factor) {
    for (auto *m : tensors(*this)) *m *= factor;
}

template <class T>
std::size_t Params<T>::size() const {
    std::size_t n = 0;
    for (const auto *m : tensors(*this)) n += static_cast<std::size_t>(m->size());
    return n;
}

template <class T>
struct BasicClassifier<T>::Cache {
    struct Layer {
        Matrix in, q, k, v, ctx;
        std::vector<Matrix> probs, probs_drop;
        Matrix attn_drop, ln1_xhat, ln1_rstd;
        Matrix h1, f1, g, ff_drop, ln2_xhat, ln2_rstd;
    };
    std::vector<TokenId> ids;
    Matrix bias;  // 1 x S additive mask
    Matrix emb_xhat, emb_rstd, emb_drop;
    std::vector<Layer> layers;
    Matrix first;  // final hidden state of token 0
    Matrix pooled, pool_drop, pooled_dropped;
};

template <class T>
BasicClassifier<T> BasicClassifier<T>::build(const ModelConfig &config, std::uint64_t seed) {
    config.validate();
    BasicClassifier model;
    model.config_ = config;
    model.params_ = shaped<T>(config);
    Rng rng(seed);
    model.params_.visit([&](const std::string &name, Matrix &m) {
        if (ends_with(name, "LayerNorm.weight")) {
            m.setOnes();
        } else if (ends_with(name, "bias")) {
            m.setZero();
        } else {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(0.02 * rng.normal());
        }
    });
    return model;
}

template <class T>
BasicClassifier<T>::BasicClassifier(ModelConfig config, Params<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    auto expected = shaped<T>(config_);
    std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> want;
    expected.visit([&](const std::string &name, const Matrix &m) { want.push_back({name, {m.rows(), m.cols()}}); });
    std::size_t i = 0;
    bool count_ok = true;
    params_.visit([&](const std::string &name, const Matrix &m) {
        if (i >= want.size()) {
            count_ok = false;
            return;
        }
        const auto [rows, cols] = want[i].second;
        if (m.rows() != rows || m.cols() != cols) {
            throw ShapeMismatch(name + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                ", config expects " + std::to_string(rows) + "x" + std::to_string(cols));
        }
        ++i;
    });
    if (!count_ok || i != want.size()) throw ShapeMismatch("tensor count does not match config layers");
}

template <class T>
template <class U>
BasicClassifier<U> BasicClassifier<T>::cast() const {
    auto out = shaped<U>(config_);
    auto dst = tensors(out);
    auto src = tensors(params_);
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return BasicClassifier<U>(config_, std::move(out));
}

template <class T>
void BasicClassifier<T>::check_batch(const tokenizer::EncodedBatch &batch) const {
    if (batch.input_ids.size() != batch.rows * batch.seq_len ||
        batch.attention_mask.size() != batch.rows * batch.seq_len) {
        throw ShapeMismatch("batch of " + std::to_string(batch.rows) + " x " + std::to_string(batch.seq_len) +
                            " has " + std::to_string(batch.input_ids.size()) + " ids and " +
                            std::to_string(batch.attention_mask.size()) + " mask entries");
    }
    if (batch.rows > 0 && batch.seq_len == 0) throw ShapeMismatch("batch rows have zero length");
    if (batch.seq_len > config_.max_position) {
        throw SequenceTooLong("sequence length " + std::to_string(batch.seq_len) + " exceeds max_position " +
                              std::to_string(config_.max_position));
    }
}

template <class T>
std::size_t BasicClassifier<T>::effective_length(std::span<const std::uint8_t> mask, const ForwardOptions &opts) const {
    if (!opts.crop_padding) return mask.size();
    std::size_t len = mask.size();
    while (len > 1 && mask[len - 1] == 0) --len;
    return len;
}

template <class T>
typename BasicClassifier<T>::Matrix BasicClassifier<T>::forward_row(std::span<const TokenId> ids,
                                                                    std::span<const std::uint8_t> mask,
                                                                    const ForwardOptions &opts,
                                                                    std::uint64_t row_seed, Cache *cache,
                                                                    Matrix *pooled_out) const {
    const auto &P = params_;
    const auto S = static_cast<Eigen::Index>(effective_length(mask, opts));
    const auto H = static_cast<Eigen::Index>(config_.hidden);
    const auto dk = static_cast<Eigen::Index>(config_.head_dim());
    const double p = opts.train ? config_.dropout : 0.0;
    Rng rng(row_seed);
    Matrix scratch;
    auto drop = [&](Matrix &x, Matrix *mask_out) {
        if (p <= 0.0) return;
        dropout(x, p, rng, mask_out ? *mask_out : scratch);
    };

    Matrix x(S, H);
    for (Eigen::Index i = 0; i < S; ++i) {
        const auto id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw IdOutOfRange("token id " + std::to_string(id) + " outside vocabulary of " +
                               std::to_string(config_.vocab_size));
        }
        x.row(i) = P.word.row(id) + P.position.row(i) + P.token_type.row(0);
    }
    Matrix bias(1, S);
    for (Eigen::Index i = 0; i < S; ++i) bias(0, i) = mask[static_cast<std::size_t>(i)] ? T(0) : T(kMaskBias);

    Matrix h = layer_norm<T>(x, P.emb_ln_g, P.emb_ln_b, cache ? &cache->emb_xhat : nullptr,
                          cache ? &cache->emb_rstd : nullptr);
    drop(h, cache ? &cache->emb_drop : nullptr);
    if (cache) {
        cache->ids.assign(ids.begin(), ids.begin() + S);
        cache->bias = bias;
        cache->layers.assign(config_.layers, {});
    }

    const T scale = T(1) / std::sqrt(T(dk));
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const auto &L = P.layers[l];
        auto *c = cache ? &cache->layers[l] : nullptr;
        Matrix q = h * L.q_w, k = h * L.k_w, v = h * L.v_w;
        add_bias(q, L.q_b);
        add_bias(k, L.k_b);
        add_bias(v, L.v_b);
        Matrix ctx(S, H);
        for (std::size_t head = 0; head < config_.heads; ++head) {
            const auto off = static_cast<Eigen::Index>(head) * dk;
            Matrix scores = (q.middleCols(off, dk) * k.middleCols(off, dk).transpose()) * scale;
            scores.rowwise() += bias.row(0);
            Matrix probs = softmax_rows(scores);
            Matrix dropped = probs;
            Matrix dmask;
            drop(dropped, &dmask);
            ctx.middleCols(off, dk).noalias() = dropped * v.middleCols(off, dk);
            if (c) {
                c->probs.push_back(std::move(probs));
                c->probs_drop.push_back(std::move(dmask));
            }
        }
        Matrix a = ctx * L.o_w;
        add_bias(a, L.o_b);
        drop(a, c ? &c->attn_drop : nullptr);
        Matrix h1 = layer_norm<T>(h + a, L.ln1_g, L.ln1_b, c ? &c->ln1_xhat : nullptr, c ? &c->ln1_rstd : nullptr);

        Matrix f1 = h1 * L.ff1_w;
        add_bias(f1, L.ff1_b);
        Matrix g = f1.unaryExpr([](T z) { return gelu(z); });
        Matrix f2 = g * L.ff2_w;
        add_bias(f2, L.ff2_b);
        drop(f2, c ? &c->ff_drop : nullptr);
        Matrix h2 = layer_norm<T>(h1 + f2, L.ln2_g, L.ln2_b, c ? &c->ln2_xhat : nullptr, c ? &c->ln2_rstd : nullptr);

        if (c) {
            c->in = std::move(h);
            c->q = std::move(q);
            c->k = std::move(k);
            c->v = std::move(v);
            c->ctx = std::move(ctx);
            c->h1 = std::move(h1);
            c->f1 = std::move(f1);
            c->g = std::move(g);
        }
        h = std::move(h2);
    }

    Matrix first = h.row(0);
    Matrix pooled = first * P.pool_w;
    add_bias(pooled, P.pool_b);
    pooled = pooled.array().tanh().matrix();
    if (pooled_out) *pooled_out = pooled;
    Matrix dropped = pooled;
    drop(dropped, cache ? &cache->pool_drop : nullptr);
    Matrix logits = dropped * P.cls_w;
    add_bias(logits, P.cls_b);
    if (cache) {
        cache->first = std::move(first);
        cache->pooled = std::move(pooled);
        cache->pooled_dropped = std::move(dropped);
    }
    return logits;
}

template <class T>
void BasicClassifier<T>::backward_row(const Cache &c, const Matrix &dlogits, Params<T> &G) const {
    const auto &P = params_;
    const auto S = static_cast<Eigen::Index>(c.ids.size());
    const auto H = static_cast<Eigen::Index>(config_.hidden);
    const auto dk = static_cast<Eigen::Index>(config_.head_dim());
    auto undrop = [](Matrix &d, const Matrix &mask) {
        if (mask.size() != 0) d = d.cwiseProduct(mask);
    };

    G.cls_w.noalias() += c.pooled_dropped.transpose() * dlogits;
    G.cls_b += dlogits;
    Matrix dpooled = dlogits * P.cls_w.transpose();
    undrop(dpooled, c.pool_drop);
    Matrix dz = dpooled.cwiseProduct((T(1) - c.pooled.array().square()).matrix());
    G.pool_w.noalias() += c.first.transpose() * dz;
    G.pool_b += dz;
    Matrix dh = Matrix::Zero(S, H);
    dh.row(0) = dz * P.pool_w.transpose();

    const T scale = T(1) / std::sqrt(T(dk));
    for (std::size_t l = config_.layers; l-- > 0;) {
        const auto &L = P.layers[l];
        auto &GL = G.layers[l];
        const auto &lc = c.layers[l];

        Matrix dr2 = layer_norm_backward(dh, lc.ln2_xhat, lc.ln2_rstd, L.ln2_g, GL.ln2_g, GL.ln2_b);
        Matrix df2 = dr2;
        undrop(df2, lc.ff_drop);
        GL.ff2_w.noalias() += lc.g.transpose() * df2;
        GL.ff2_b += df2.colwise().sum();
        Matrix df1 = (df2 * L.ff2_w.transpose()).cwiseProduct(lc.f1.unaryExpr([](T z) { return gelu_grad(z); }));
        GL.ff1_w.noalias() += lc.h1.transpose() * df1;
        GL.ff1_b += df1.colwise().sum();
        Matrix dh1 = dr2 + df1 * L.ff1_w.transpose();

        Matrix dr1 = layer_norm_backward(dh1, lc.ln1_xhat, lc.ln1_rstd, L.ln1_g, GL.ln1_g, GL.ln1_b);
        Matrix da = dr1;
        undrop(da, lc.attn_drop);
        GL.o_w.noalias() += lc.ctx.transpose() * da;
        GL.o_b += da.colwise().sum();
        Matrix dctx = da * L.o_w.transpose();

        Matrix dq(S, H), dkm(S, H), dv(S, H);
        for (std::size_t head = 0; head < config_.heads; ++head) {
            const auto off = static_cast<Eigen::Index>(head) * dk;
            const Matrix &probs = lc.probs[head];
            const Matrix &dmask = lc.probs_drop[head];
            const Matrix dropped = dmask.size() ? Matrix(probs.cwiseProduct(dmask)) : probs;
            const auto dch = dctx.middleCols(off, dk);
            dv.middleCols(off, dk).noalias() = dropped.transpose() * dch;
            Matrix dp = dch * lc.v.middleCols(off, dk).transpose();
            undrop(dp, dmask);
            const Matrix rowdot = dp.cwiseProduct(probs).rowwise().sum();
            Matrix ds = (probs.array() * (dp.array().colwise() - rowdot.col(0).array())).matrix() * scale;
            dq.middleCols(off, dk).noalias() = ds * lc.k.middleCols(off, dk);
            dkm.middleCols(off, dk).noalias() = ds.transpose() * lc.q.middleCols(off, dk);
        }
        GL.q_w.noalias() += lc.in.transpose() * dq;
        GL.k_w.noalias() += lc.in.transpose() * dkm;
        GL.v_w.noalias() += lc.in.transpose() * dv;
        GL.q_b += dq.colwise().sum();
        GL.k_b += dkm.colwise().sum();
        GL.v_b += dv.colwise().sum();
        dh = dr1 + dq * L.q_w.transpose() + dkm * L.k_w.transpose() + dv * L.v_w.transpose();
    }

    undrop(dh, c.emb_drop);
    Matrix dx = layer_norm_backward(dh, c.emb_xhat, c.emb_rstd, P.emb_ln_g, G.emb_ln_g, G.emb_ln_b);
    for (Eigen::Index i = 0; i < S; ++i) {
        G.word.row(c.ids[static_cast<std::size_t>(i)]) += dx.row(i);
        G.position.row(i) += dx.row(i);
        G.token_type.row(0) += dx.row(i);
    }
}

template <class T>
std::vector<typename BasicClassifier<T>::Matrix> BasicClassifier<T>::embed(const tokenizer::EncodedBatch &batch,
                                                                           const ForwardOptions &opts) const {
    check_batch(batch);
    const auto &P = params_;
    std::vector<Matrix> out;
    out.reserve(batch.rows);
    for (std::size_t r = 0; r < batch.rows; ++r) {
        const auto ids = batch.ids_row(r);
        const auto S = static_cast<Eigen::Index>(effective_length(batch.mask_row(r), opts));
        Matrix x(S, static_cast<Eigen::Index>(config_.hidden));
        for (Eigen::Index i = 0; i < S; ++i) {
            const auto id = ids[static_cast<std::size_t>(i)];
            if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
                throw IdOutOfRange("token id " + std::to_string(id) + " outside vocabulary of " +
                                   std::to_string(config_.vocab_size));
            }
            x.row(i) = P.word.row(id) + P.position.row(i) + P.token_type.row(0);
        }
        Matrix h = layer_norm<T>(x, P.emb_ln_g, P.emb_ln_b, nullptr, nullptr);
        if (opts.train && config_.dropout > 0) {
            Rng rng(mix_seed(opts.seed, r));
            Matrix mask;
            dropout(h, config_.dropout, rng, mask);
        }
        out.push_back(std::move(h));
    }
    return out;
}

template <class T>
typename BasicClassifier<T>::Matrix BasicClassifier<T>::attention(std::size_t layer, const Matrix &x,
                                                                  std::span<const std::uint8_t> mask,
                                                                  std::vector<Matrix> *probs) const {
    if (layer >= config_.layers) throw ShapeMismatch("layer " + std::to_string(layer) + " does not exist");
    if (static_cast<std::size_t>(x.cols()) != config_.hidden || mask.size() != static_cast<std::size_t>(x.rows())) {
        throw ShapeMismatch("attention input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                            " with " + std::to_string(mask.size()) + " mask entries");
    }
    const auto &L = params_.layers[layer];
    const auto S = x.rows();
    const auto dk = static_cast<Eigen::Index>(config_.head_dim());
    Matrix q = x * L.q_w, k = x * L.k_w, v = x * L.v_w;
    add_bias(q, L.q_b);
    add_bias(k, L.k_b);
    add_bias(v, L.v_b);
    Matrix bias(1, S);
    for (Eigen::Index i = 0; i < S; ++i) bias(0, i) = mask[static_cast<std::size_t>(i)] ? T(0) : T(kMaskBias);
    const T scale = T(1) / std::sqrt(T(dk));
    Matrix ctx(S, x.cols());
    if (probs) probs->clear();
    for (std::size_t head = 0; head < config_.heads; ++head) {
        const auto off = static_cast<Eigen::Index>(head) * dk;
        Matrix scores = (q.middleCols(off, dk) * k.middleCols(off, dk).transpose()) * scale;
        scores.rowwise() += bias.row(0);
        Matrix p = softmax_rows(scores);
        ctx.middleCols(off, dk).noalias() = p * v.middleCols(off, dk);
        if (probs) probs->push_back(std::move(p));
    }
    Matrix a = ctx * L.o_w;
    add_bias(a, L.o_b);
    return layer_norm<T>(x + a, L.ln1_g, L.ln1_b, nullptr, nullptr);
}

template <class T>
typename BasicClassifier<T>::Matrix BasicClassifier<T>::ffn(std::size_t layer, const Matrix &x) const {
    if (layer >= config_.layers) throw ShapeMismatch("layer " + std::to_string(layer) + " does not exist");
    if (static_cast<std::size_t>(x.cols()) != config_.hidden) throw ShapeMismatch("ffn input width != hidden");
    const auto &L = params_.layers[layer];
    Matrix f1 = x * L.ff1_w;
    add_bias(f1, L.ff1_b);
    Matrix f2 = f1.unaryExpr([](T z) { return gelu(z); }) * L.ff2_w;
    add_bias(f2, L.ff2_b);
    return layer_norm<T>(x + f2, L.ln2_g, L.ln2_b, nullptr, nullptr);
}

template <class T>
ForwardOutput<T> BasicClassifier<T>::forward(const tokenizer::EncodedBatch &batch, const ForwardOptions &opts) const {
    check_batch(batch);
    const auto B = static_cast<Eigen::Index>(batch.rows);
    ForwardOutput<T> out;
    out.logits.resize(B, static_cast<Eigen::Index>(config_.n_classes));
    out.pooled.resize(B, static_cast<Eigen::Index>(config_.hidden));
    for (std::size_t r = 0; r < batch.rows; ++r) {
        Matrix pooled;
        out.logits.row(static_cast<Eigen::Index>(r)) =
            forward_row(batch.ids_row(r), batch.mask_row(r), opts, mix_seed(opts.seed, r), nullptr, &pooled);
        out.pooled.row(static_cast<Eigen::Index>(r)) = pooled;
    }
    out.probabilities = softmax_rows(out.logits);
    return out;
}

template <class T>
T BasicClassifier<T>::loss_and_grads(const tokenizer::EncodedBatch &batch, std::span<const int> labels,
                                     const ForwardOptions &opts, Params<T> *grads, std::size_t threads,
                                     Matrix *logits_out) const {
    check_batch(batch);
    if (labels.size() != batch.rows) {
        throw BadLabel(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch.rows));
    }
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= config_.n_classes) {
            throw BadLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(config_.n_classes) + ")");
        }
    }
    if (logits_out) logits_out->resize(static_cast<Eigen::Index>(batch.rows), static_cast<Eigen::Index>(config_.n_classes));
    if (batch.rows == 0) {
        if (grads) *grads = params_.zeros_like();
        return T(0);
    }

    // A fixed shard layout keeps the floating-point summation order, and so
    // the result, independent of the thread count.
    constexpr std::size_t kShards = 8;
    const std::size_t n_shards = std::min(kShards, batch.rows);
    std::vector<Params<T>> shard_grads(grads ? n_shards : 0);
    std::vector<T> shard_loss(n_shards, T(0));
    const T inv_b = T(1) / T(batch.rows);

    auto run_shard = [&](std::size_t s) {
        const auto begin = s * batch.rows / n_shards;
        const auto end = (s + 1) * batch.rows / n_shards;
        if (grads) shard_grads[s] = params_.zeros_like();
        Cache cache;
        for (auto r = begin; r < end; ++r) {
            Matrix logits = forward_row(batch.ids_row(r), batch.mask_row(r), opts, mix_seed(opts.seed, r),
                                        grads ? &cache : nullptr, nullptr);
            const T m = logits.maxCoeff();
            const T lse = m + std::log((logits.array() - m).exp().sum());
            const auto y = labels[r];
            if (logits_out) logits_out->row(static_cast<Eigen::Index>(r)) = logits;
            shard_loss[s] += lse - logits(0, y);
            if (!grads) continue;
            Matrix dlogits = (logits.array() - lse).exp().matrix();
            dlogits(0, y) -= T(1);
            dlogits *= inv_b;
            backward_row(cache, dlogits, shard_grads[s]);
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, n_shards));
    if (n_threads == 1) {
        for (std::size_t s = 0; s < n_shards; ++s) run_shard(s);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t s = t; s < n_shards; s += n_threads) run_shard(s);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto &th : pool) th.join();
        for (auto &e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    T loss = T(0);
    for (auto l : shard_loss) loss += l;
    if (grads) {
        *grads = std::move(shard_grads[0]);
        for (std::size_t s = 1; s < n_shards; ++s) grads->add(shard_grads[s]);
    }
    return loss * inv_b;
}

template struct Params<float>;
template struct Params<double>;
template class BasicClassifier<float>;
template class BasicClassifier<double>;
template BasicClassifier<double> BasicClassifier<float>::cast<double>() const;
template BasicClassifier<float> BasicClassifier<double>::cast<float>() const;
template BasicClassifier<float> BasicClassifier<float>::cast<float>() const;
template BasicClassifier<double> BasicClassifier<double>::cast<double>() const;
template float gelu<float>(float);
template double gelu<double>(double);
template float gelu_grad<float>(float);
template double gelu_grad<double>(double);
template Mat<float> softmax_rows<float>(const Mat<float> &);
template Mat<double> softmax_rows<double>(const Mat<double> &);

}  // namespace trafficlm
