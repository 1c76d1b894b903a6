#include "trafficlm/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "trafficlm/error.hpp"

namespace trafficlm {

using nlohmann::json;

namespace {

/// Reads `obj[key]` into `out` when present; BadConfig names "prefix.key".
template <class V>
void read(const json &obj, const char *key, V &out, const std::string &prefix, std::set<std::string> &seen) {
    seen.insert(key);
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<V>();
    } catch (const json::exception &) {
        throw BadConfig("config key '" + prefix + key + "' has the wrong type");
    }
}

void reject_unknown(const json &obj, const std::set<std::string> &seen, const std::string &prefix) {
    for (const auto &[key, value] : obj.items()) {
        if (!seen.contains(key)) throw BadConfig("unknown config key '" + prefix + key + "'");
    }
}

const json &section(const json &root, const char *name) {
    static const json empty = json::object();
    const auto it = root.find(name);
    if (it == root.end()) return empty;
    if (!it->is_object()) throw BadConfig(std::string("config key '") + name + "' must be an object");
    return *it;
}

}  // namespace

void PipelineConfig::validate() const {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw BadConfig("config key 'train_ratio' must be in (0, 1)");
    if (!(window_seconds > 0.0)) throw BadConfig("config key 'window_seconds' must be > 0");
    if (label_column.empty()) throw BadConfig("config key 'label_column' must not be empty");
    try {
        hash.validate();
    } catch (const Error &e) {
        throw BadConfig(std::string("config section 'hash': ") + e.what());
    }
    if (tokenizer.vocab_size <= 256 + tokenizer::default_specials().size()) {
        throw BadConfig("config key 'tokenizer.vocab_size' must exceed 261");
    }
    if (tokenizer.min_frequency < 1) throw BadConfig("config key 'tokenizer.min_frequency' must be >= 1");
    if (max_len < 2) throw BadConfig("config key 'tokenizer.max_len' must be >= 2");
    if (chunk_size < 1) throw BadConfig("config key 'tokenizer.chunk_size' must be >= 1");
    if (max_len > model.max_position) {
        throw BadConfig("config key 'tokenizer.max_len' (" + std::to_string(max_len) +
                        ") exceeds 'model.max_position' (" + std::to_string(model.max_position) + ")");
    }
    model.validate();
    train.validate();
}

void PipelineConfig::propagate_seed() { train.seed = seed; }

PipelineConfig parse_pipeline_config(const std::string &text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception &e) {
        throw BadConfig(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw BadConfig("config must be a JSON object");

    PipelineConfig c;
    std::set<std::string> seen;
    read(root, "seed", c.seed, "", seen);
    read(root, "schema", c.schema, "", seen);
    read(root, "label_column", c.label_column, "", seen);
    read(root, "train_ratio", c.train_ratio, "", seen);
    read(root, "window_seconds", c.window_seconds, "", seen);
    std::optional<std::vector<std::string>> exclusions;
    seen.insert("exclusions");
    if (root.contains("exclusions")) {
        try {
            auto list = root["exclusions"].get<std::vector<std::string>>();
            c.exclusions = std::set<std::string>(list.begin(), list.end());
        } catch (const json::exception &) {
            throw BadConfig("config key 'exclusions' must be a list of column names");
        }
    }
    for (const char *name : {"hash", "tokenizer", "model", "train", "paths"}) seen.insert(name);
    reject_unknown(root, seen, "");

    {
        const auto &s = section(root, "hash");
        std::set<std::string> k;
        read(s, "algorithm", c.hash.algorithm, "hash.", k);
        read(s, "truncate_hex", c.hash.truncate_hex, "hash.", k);
        reject_unknown(s, k, "hash.");
    }
    {
        const auto &s = section(root, "tokenizer");
        std::set<std::string> k;
        read(s, "vocab_size", c.tokenizer.vocab_size, "tokenizer.", k);
        read(s, "min_frequency", c.tokenizer.min_frequency, "tokenizer.", k);
        read(s, "max_len", c.max_len, "tokenizer.", k);
        read(s, "chunk_size", c.chunk_size, "tokenizer.", k);
        reject_unknown(s, k, "tokenizer.");
    }
    {
        const auto &s = section(root, "model");
        std::set<std::string> k;
        auto &m = c.model;
        read(s, "vocab_size", m.vocab_size, "model.", k);
        read(s, "hidden", m.hidden, "model.", k);
        read(s, "layers", m.layers, "model.", k);
        read(s, "heads", m.heads, "model.", k);
        read(s, "intermediate", m.intermediate, "model.", k);
        read(s, "max_position", m.max_position, "model.", k);
        read(s, "type_vocab", m.type_vocab, "model.", k);
        read(s, "dropout", m.dropout, "model.", k);
        read(s, "n_classes", m.n_classes, "model.", k);
        reject_unknown(s, k, "model.");
    }
    {
        const auto &s = section(root, "train");
        std::set<std::string> k;
        auto &t = c.train;
        read(s, "epochs", t.epochs, "train.", k);
        read(s, "batch_size", t.batch_size, "train.", k);
        read(s, "learning_rate", t.learning_rate, "train.", k);
        read(s, "optimizer", t.optimizer, "train.", k);
        read(s, "beta1", t.beta1, "train.", k);
        read(s, "beta2", t.beta2, "train.", k);
        read(s, "epsilon", t.epsilon, "train.", k);
        read(s, "clip_norm", t.clip_norm, "train.", k);
        read(s, "eval_every", t.eval_every, "train.", k);
        read(s, "threads", t.threads, "train.", k);
        reject_unknown(s, k, "train.");
    }
    {
        const auto &s = section(root, "paths");
        std::set<std::string> k;
        auto &p = c.paths;
        read(s, "corpus", p.corpus, "paths.", k);
        read(s, "labels", p.labels, "paths.", k);
        read(s, "eval_corpus", p.eval_corpus, "paths.", k);
        read(s, "eval_labels", p.eval_labels, "paths.", k);
        read(s, "tokenizer_dir", p.tokenizer_dir, "paths.", k);
        read(s, "checkpoint", p.checkpoint, "paths.", k);
        read(s, "history", p.history, "paths.", k);
        read(s, "report_dir", p.report_dir, "paths.", k);
        reject_unknown(s, k, "paths.");
    }
    c.propagate_seed();
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("config file " + path + " not found");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_pipeline_config(text.str());
}

std::string format_pipeline_config(const PipelineConfig &c) {
    json root;
    root["seed"] = c.seed;
    root["schema"] = c.schema;
    if (c.exclusions) root["exclusions"] = std::vector<std::string>(c.exclusions->begin(), c.exclusions->end());
    root["label_column"] = c.label_column;
    root["train_ratio"] = c.train_ratio;
    root["window_seconds"] = c.window_seconds;
    root["hash"] = {{"algorithm", c.hash.algorithm}, {"truncate_hex", c.hash.truncate_hex}};
    root["tokenizer"] = {{"vocab_size", c.tokenizer.vocab_size},
                         {"min_frequency", c.tokenizer.min_frequency},
                         {"max_len", c.max_len},
                         {"chunk_size", c.chunk_size}};
    const auto &m = c.model;
    root["model"] = {{"vocab_size", m.vocab_size},     {"hidden", m.hidden},
                     {"layers", m.layers},             {"heads", m.heads},
                     {"intermediate", m.intermediate}, {"max_position", m.max_position},
                     {"type_vocab", m.type_vocab},     {"dropout", m.dropout},
                     {"n_classes", m.n_classes}};
    const auto &t = c.train;
    root["train"] = {{"epochs", t.epochs},       {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                     {"optimizer", t.optimizer}, {"beta1", t.beta1},           {"beta2", t.beta2},
                     {"epsilon", t.epsilon},     {"clip_norm", t.clip_norm},   {"eval_every", t.eval_every},
                     {"threads", t.threads}};
    const auto &p = c.paths;
    root["paths"] = {{"corpus", p.corpus},           {"labels", p.labels},
                     {"eval_corpus", p.eval_corpus}, {"eval_labels", p.eval_labels},
                     {"tokenizer_dir", p.tokenizer_dir}, {"checkpoint", p.checkpoint},
                     {"history", p.history},         {"report_dir", p.report_dir}};
    return root.dump(2) + "\n";
}

FeatureSchema resolve_schema(const PipelineConfig &config) {
    auto schema = config.schema.empty() ? edge_iiot_schema() : load_schema(config.schema);
    if (config.exclusions) {
        for (const auto &name : *config.exclusions) {
            if (!schema.index_of(name)) throw BadConfig("config key 'exclusions' names unknown column '" + name + "'");
        }
        schema = schema.with_exclusions(*config.exclusions);
    }
    return schema;
}

PipelineConfig desk_config() {
    PipelineConfig c;
    c.hash.truncate_hex = 8;
    c.tokenizer.vocab_size = 1000;
    c.tokenizer.min_frequency = 2;
    c.max_len = 128;
    c.chunk_size = 5000;
    c.model.vocab_size = 1000;
    c.model.hidden = 64;
    c.model.layers = 2;
    c.model.heads = 4;
    c.model.intermediate = 256;
    c.model.max_position = 128;
    c.model.dropout = 0.1;
    c.train.epochs = 5;
    c.train.batch_size = 32;
    c.train.learning_rate = 1e-3;
    return c;
}

}  // namespace trafficlm
