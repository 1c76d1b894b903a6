#include "trafficlm/training.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "trafficlm/error.hpp"
#include "trafficlm/rng.hpp"

namespace trafficlm {

void TrainConfig::validate() const {
    if (epochs < 1) throw BadConfig("train.epochs must be >= 1");
    if (batch_size < 1) throw BadConfig("train.batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw BadConfig("train.learning_rate must be >= 0");
    if (optimizer != "adam" && optimizer != "sgd") {
        throw BadConfig("train.optimizer must be 'adam' or 'sgd', got '" + optimizer + "'");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw BadConfig("train.beta1 and train.beta2 must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw BadConfig("train.epsilon must be > 0");
    if (!(clip_norm >= 0.0)) throw BadConfig("train.clip_norm must be >= 0");
}

const HistoryRecord *TrainHistory::last(const std::string &split) const {
    for (auto it = records.rbegin(); it != records.rend(); ++it) {
        if (it->split == split) return &*it;
    }
    return nullptr;
}

std::string TrainHistory::to_csv() const {
    std::ostringstream out;
    out.precision(9);
    out << "step,epoch,split,loss,accuracy\n";
    for (const auto &r : records) out << r.step << ',' << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.accuracy << '\n';
    return out.str();
}

void TrainHistory::write_csv(const std::string &path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << to_csv();
    if (!out) throw IoError("write failed for " + path);
}

LossAndGrads loss_and_grads(const Classifier &model, const tokenizer::EncodedBatch &batch,
                            std::span<const int> labels, const ForwardOptions &opts) {
    LossAndGrads out;
    out.loss = model.loss_and_grads(batch, labels, opts, &out.grads);
    return out;
}

namespace {

std::vector<Mat<float> *> tensors(Params<float> &p) {
    std::vector<Mat<float> *> out;
    p.visit([&](const std::string &, Mat<float> &m) { out.push_back(&m); });
    return out;
}

std::vector<const Mat<float> *> tensors(const Params<float> &p) {
    std::vector<const Mat<float> *> out;
    p.visit([&](const std::string &, const Mat<float> &m) { out.push_back(&m); });
    return out;
}

double grad_norm(const Params<float> &g) {
    double sq = 0.0;
    for (const auto *m : tensors(g)) sq += m->template cast<double>().squaredNorm();
    return std::sqrt(sq);
}

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(static_cast<float>(lr)) {}
    void step(Params<float> &params, const Params<float> &grads) override {
        auto p = tensors(params);
        auto g = tensors(grads);
        for (std::size_t i = 0; i < p.size(); ++i) *p[i] -= lr_ * *g[i];
    }

private:
    float lr_;
};

class Adam final : public Optimizer {
public:
    Adam(const TrainConfig &c, const Params<float> &like)
        : lr_(c.learning_rate), b1_(c.beta1), b2_(c.beta2), eps_(c.epsilon), m_(like.zeros_like()),
          v_(like.zeros_like()) {}

    void step(Params<float> &params, const Params<float> &grads) override {
        ++t_;
        const auto c1 = static_cast<float>(1.0 - std::pow(b1_, double(t_)));
        const auto c2 = static_cast<float>(1.0 - std::pow(b2_, double(t_)));
        const auto b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
        const auto lr = static_cast<float>(lr_), eps = static_cast<float>(eps_);
        auto p = tensors(params);
        auto g = tensors(grads);
        auto m = tensors(m_);
        auto v = tensors(v_);
        for (std::size_t i = 0; i < p.size(); ++i) {
            *m[i] = b1 * *m[i] + (1.0f - b1) * *g[i];
            *v[i] = b2 * *v[i] + (1.0f - b2) * g[i]->cwiseAbs2();
            p[i]->array() -= lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + eps);
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    Params<float> m_, v_;
};

double accuracy_of(const Mat<float> &logits, std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int pred = argmax(std::span<const float>(logits.row(r).data(), static_cast<std::size_t>(logits.cols())));
        if (pred == labels[static_cast<std::size_t>(r)]) ++correct;
    }
    return double(correct) / double(labels.size());
}

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig &config, const Params<float> &like) {
    if (config.optimizer == "adam") return std::make_unique<Adam>(config, like);
    if (config.optimizer == "sgd") return std::make_unique<Sgd>(config.learning_rate);
    throw BadConfig("train.optimizer must be 'adam' or 'sgd', got '" + config.optimizer + "'");
}

int argmax(std::span<const float> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

Predictions predict(const Classifier &model, const tokenizer::EncodedBatch &inputs, std::size_t batch_size) {
    if (batch_size < 1) throw BadConfig("batch_size must be >= 1");
    Predictions out;
    out.probabilities.resize(static_cast<Eigen::Index>(inputs.rows),
                             static_cast<Eigen::Index>(model.config().n_classes));
    out.classes.reserve(inputs.rows);
    for (std::size_t begin = 0; begin < inputs.rows; begin += batch_size) {
        const auto end = std::min(inputs.rows, begin + batch_size);
        const auto fwd = model.forward(inputs.slice(begin, end));
        for (Eigen::Index r = 0; r < fwd.probabilities.rows(); ++r) {
            out.probabilities.row(static_cast<Eigen::Index>(begin) + r) = fwd.probabilities.row(r);
            out.classes.push_back(argmax(std::span<const float>(fwd.probabilities.row(r).data(),
                                                                static_cast<std::size_t>(fwd.probabilities.cols()))));
        }
    }
    return out;
}

HistoryRecord evaluate(const Classifier &model, const Dataset &data, std::size_t batch_size) {
    HistoryRecord rec;
    rec.split = "eval";
    if (data.size() == 0) return rec;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const auto end = std::min(data.size(), begin + batch_size);
        const auto labels = std::span<const int>(data.labels).subspan(begin, end - begin);
        Mat<float> logits;
        const float loss = model.loss_and_grads(data.inputs.slice(begin, end), labels, {}, nullptr, 1, &logits);
        loss_sum += double(loss) * double(end - begin);
        correct += static_cast<std::size_t>(std::llround(accuracy_of(logits, labels) * double(end - begin)));
    }
    rec.loss = loss_sum / double(data.size());
    rec.accuracy = double(correct) / double(data.size());
    return rec;
}

TrainResult train(Classifier model, const Dataset &train_data, const Dataset &eval_data, const TrainConfig &config,
                  const RecordCallback &on_record) {
    config.validate();
    if (train_data.size() == 0) throw EmptyCorpus("no training samples");
    if (train_data.inputs.rows != train_data.size()) {
        throw ShapeMismatch(std::to_string(train_data.inputs.rows) + " training rows but " +
                            std::to_string(train_data.size()) + " labels");
    }

    auto optimizer = make_optimizer(config, model.params());
    TrainHistory history;
    auto record = [&](HistoryRecord rec) {
        if (on_record) on_record(rec);
        history.records.push_back(std::move(rec));
    };
    auto run_eval = [&](std::size_t step, std::size_t epoch) {
        if (eval_data.size() == 0) return;
        auto rec = evaluate(model, eval_data);
        rec.step = step;
        rec.epoch = epoch;
        record(rec);
    };

    std::vector<std::size_t> order(train_data.size());
    std::size_t step = 0;
    Params<float> grads;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng(mix_seed(config.seed, epoch, 0x5f3759df)).shuffle(std::span<std::size_t>(order));
        std::size_t last_eval_step = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const auto end = std::min(order.size(), begin + config.batch_size);
            const auto rows = std::span<const std::size_t>(order).subspan(begin, end - begin);
            const auto batch = train_data.inputs.gather(rows);
            std::vector<int> labels;
            labels.reserve(rows.size());
            for (auto r : rows) labels.push_back(train_data.labels[r]);

            ++step;
            ForwardOptions opts;
            opts.train = true;
            opts.seed = mix_seed(config.seed, step, 1);
            Mat<float> logits;
            const float loss = model.loss_and_grads(batch, labels, opts, &grads, config.threads, &logits);
            const double norm = grad_norm(grads);
            if (!std::isfinite(loss) || !std::isfinite(norm)) {
                std::ostringstream msg;
                msg << "loss " << loss << " at step " << step << " (epoch " << epoch
                    << "), learning rate " << config.learning_rate << ", gradient norm " << norm;
                throw NonFiniteLoss(msg.str());
            }
            if (config.clip_norm > 0.0 && norm > config.clip_norm) grads.scale(static_cast<float>(config.clip_norm / norm));
            optimizer->step(model.params(), grads);

            record({step, epoch, "train", double(loss), accuracy_of(logits, labels)});
            if (config.eval_every > 0 && step % config.eval_every == 0) {
                run_eval(step, epoch);
                last_eval_step = step;
            }
        }
        if (last_eval_step != step) run_eval(step, epoch);
    }
    return {std::move(model), std::move(history)};
}

}  // namespace trafficlm
