#include "trafficlm/pipeline.hpp"

#include <chrono>

#include "trafficlm/error.hpp"

namespace trafficlm {

std::vector<int> label_indices(const std::vector<std::string> &labels) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto cls = find_class(labels[i]);
        if (!cls) throw UnknownLabel("label '" + labels[i] + "' at row " + std::to_string(i) + " is not a known class");
        out.push_back(cls->index);
    }
    return out;
}

std::vector<std::string> render_lines(const ppfle::DataList &data) {
    std::vector<std::string> lines;
    lines.reserve(data.lines.size());
    for (const auto &line : data.lines) lines.push_back(line.render());
    return lines;
}

Dataset make_dataset(const tokenizer::TokenizerModel &tok, const std::vector<std::string> &lines,
                     const std::vector<std::string> &labels, std::size_t max_len, std::size_t chunk_size) {
    if (lines.size() != labels.size()) {
        throw LengthMismatch(std::to_string(lines.size()) + " corpus lines vs " + std::to_string(labels.size()) +
                             " labels");
    }
    Dataset data;
    data.inputs = tokenizer::encode_chunked(tok, lines, chunk_size, max_len);
    data.labels = label_indices(labels);
    return data;
}

EndToEndResult run_end_to_end(const FeatureTable &table, const PipelineConfig &config,
                              const RecordCallback &on_record) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    EndToEndResult result;

    const auto split = split_train_eval(table, config.train_ratio, config.seed);
    const auto train_data = ppfle::encode_table(split.train, config.hash);
    const auto eval_data = ppfle::encode_table(split.eval, config.hash);
    result.train_corpus = ppfle::format_corpus(train_data);
    result.eval_corpus = ppfle::format_corpus(eval_data);

    const auto train_lines = render_lines(train_data);
    const auto eval_lines = render_lines(eval_data);
    result.tokenizer = tokenizer::train_bbpe(tokenizer::normalize(train_lines), config.tokenizer);

    auto model_config = config.model;
    if (model_config.vocab_size != result.tokenizer.config().vocab_size) {
        throw BadConfig("model.vocab_size (" + std::to_string(model_config.vocab_size) +
                        ") differs from tokenizer.vocab_size (" + std::to_string(config.tokenizer.vocab_size) + ")");
    }
    const auto train_set = make_dataset(result.tokenizer, train_lines, *train_data.labels, config.max_len,
                                        config.chunk_size);
    const auto eval_set =
        make_dataset(result.tokenizer, eval_lines, *eval_data.labels, config.max_len, config.chunk_size);

    auto model = Classifier::build(model_config, config.seed);
    auto trained = train(std::move(model), train_set, eval_set, config.train, on_record);
    result.model = std::move(trained.model);
    result.history = std::move(trained.history);

    const auto pred = predict(result.model, eval_set.inputs);
    const Mat<double> probs = pred.probabilities.cast<double>();
    result.report = classification_report(eval_set.labels, pred.classes, &probs, model_config.n_classes);
    result.eval_accuracy = result.report.accuracy;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

EndToEndResult run_synthetic(const PipelineConfig &config, std::size_t samples_per_class,
                             const RecordCallback &on_record) {
    const auto schema = resolve_schema(config);
    const auto table = generate_synthetic(samples_per_class, config.model.n_classes, schema, config.seed);
    return run_end_to_end(table, config, on_record);
}

}  // namespace trafficlm
