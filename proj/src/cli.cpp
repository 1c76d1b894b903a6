#include "trafficlm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "trafficlm/benchmark.hpp"
#include "trafficlm/checkpoint.hpp"
#include "trafficlm/config.hpp"
#include "trafficlm/csv.hpp"
#include "trafficlm/error.hpp"
#include "trafficlm/pcap.hpp"
#include "trafficlm/pipeline.hpp"
#include "trafficlm/spectrum.hpp"

namespace trafficlm {

namespace fs = std::filesystem;

namespace {

void require_input(const std::string &path, const std::string &flag) {
    if (path.empty()) throw BadConfig(flag + " is required");
    if (!fs::exists(path)) throw MissingFile(path + " (" + flag + ") does not exist");
}

void require_output(const std::string &path, const std::string &flag) {
    if (path.empty()) throw BadConfig(flag + " is required");
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

bool looks_like_pcap(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    unsigned char magic[4] = {};
    in.read(reinterpret_cast<char *>(magic), 4);
    if (in.gcount() != 4) return false;
    const std::uint32_t le = magic[0] | magic[1] << 8 | magic[2] << 16 | std::uint32_t(magic[3]) << 24;
    const std::uint32_t be = magic[3] | magic[2] << 8 | magic[1] << 16 | std::uint32_t(magic[0]) << 24;
    for (auto m : {0xa1b2c3d4u, 0xa1b23c4du}) {
        if (le == m || be == m) return true;
    }
    return false;
}

bool csv_has_column(const std::string &path, const std::string &column) {
    std::ifstream in(path, std::ios::binary);
    std::string first;
    std::getline(in, first);
    const auto records = csv::parse(first);
    if (records.empty()) return false;
    return std::find(records[0].begin(), records[0].end(), column) != records[0].end();
}

FeatureTable load_table(const std::string &path, const PipelineConfig &cfg) {
    CsvOptions options;
    if (csv_has_column(path, cfg.label_column)) options.label_column = cfg.label_column;
    return load_csv(path, resolve_schema(cfg), options);
}

std::string format_probs(const Mat<float> &row) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(6);
    for (Eigen::Index j = 0; j < row.cols(); ++j) out << (j ? " " : "") << row(0, j);
    return out.str();
}

std::string class_name(int index, std::size_t n_classes) {
    if (n_classes == kNumClasses) return std::string(class_at(index).name);
    return "class_" + std::to_string(index);
}

tokenizer::EncodedBatch single_row(const tokenizer::TokenizerModel &tok, const std::string &line, std::size_t max_len) {
    const auto enc = tokenizer::encode_line(tok, line, max_len);
    tokenizer::EncodedBatch batch;
    batch.rows = 1;
    batch.seq_len = max_len;
    batch.input_ids = enc.ids;
    batch.attention_mask = enc.mask;
    return batch;
}

void check_vocab(const Classifier &model, const tokenizer::TokenizerModel &tok) {
    if (model.config().vocab_size != tok.config().vocab_size || tok.size() > model.config().vocab_size) {
        throw BadConfig("checkpoint vocab_size " + std::to_string(model.config().vocab_size) +
                        " does not match tokenizer vocab_size " + std::to_string(tok.config().vocab_size) + " (" +
                        std::to_string(tok.size()) + " tokens)");
    }
}

std::string find_config_path(int argc, const char *const *argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) return argv[i + 1];
        if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
    }
    return {};
}

}  // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    PipelineConfig cfg;
    std::string config_path;
    try {
        config_path = find_config_path(argc, argv);
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    }

    CLI::App app{"Flow-feature hashing, byte-level BPE and a compact transformer classifier for network traffic"};
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", config_path, "JSON pipeline config; flags override its values");
    app.add_option("--seed", cfg.seed, "Seed for splitting, initialization, shuffling and dropout")
        ->capture_default_str();

    auto add_schema = [&](CLI::App *sub) {
        sub->add_option("--schema", cfg.schema, "Schema file (default: built-in Edge-IIoTset schema)");
        sub->add_option("--label-column", cfg.label_column, "CSV column holding the class name")->capture_default_str();
    };
    auto add_hash = [&](CLI::App *sub) {
        sub->add_option("--hash", cfg.hash.algorithm, "Digest algorithm")->capture_default_str();
        sub->add_option("--truncate-hex", cfg.hash.truncate_hex, "Keep this many hex characters (0 = full digest)")
            ->capture_default_str();
    };
    auto add_encoding = [&](CLI::App *sub) {
        sub->add_option("--max-len", cfg.max_len, "Maximum sequence length in tokens")->capture_default_str();
        sub->add_option("--chunk-size", cfg.chunk_size, "Lines per encoding chunk")->capture_default_str();
    };

    // extract
    std::string extract_in, extract_out;
    auto *extract = app.add_subcommand("extract", "PCAP or CSV -> schema-ordered feature CSV");
    extract->add_option("--input", extract_in, "Capture (.pcap) or CSV file")->required();
    extract->add_option("--output", extract_out, "Output CSV")->required();
    extract->add_option("--window", cfg.window_seconds, "Flow time window in seconds")->capture_default_str();
    add_schema(extract);

    // synth
    std::string synth_out;
    std::size_t synth_per_class = 500, synth_classes = kNumClasses;
    auto *synth = app.add_subcommand("synth", "Generate a labeled synthetic feature CSV");
    synth->add_option("--output", synth_out, "Output CSV")->required();
    synth->add_option("--per-class", synth_per_class, "Rows per class")->capture_default_str();
    synth->add_option("--classes", synth_classes, "Number of classes")->capture_default_str();
    add_schema(synth);

    // split
    std::string split_in, split_train, split_eval;
    auto *split = app.add_subcommand("split", "Stratified train/eval split of a labeled CSV");
    split->add_option("--input", split_in, "Labeled CSV")->required();
    split->add_option("--train-out", split_train, "Training CSV")->required();
    split->add_option("--eval-out", split_eval, "Evaluation CSV")->required();
    split->add_option("--ratio", cfg.train_ratio, "Training fraction per class")->capture_default_str();
    add_schema(split);

    // encode
    std::string encode_in, encode_out, encode_labels;
    std::vector<std::string> exclude;
    auto *encode = app.add_subcommand("encode", "Feature CSV -> hashed corpus (+ label file)");
    encode->add_option("--input", encode_in, "Feature CSV")->required();
    encode->add_option("--output", encode_out, "Corpus file, one line per row")->required();
    encode->add_option("--labels-out", encode_labels, "Label file, one class name per line");
    encode->add_option("--exclude", exclude, "Columns to drop (replaces the schema's exclusions)")->delimiter(',');
    add_schema(encode);
    add_hash(encode);

    // train-tokenizer
    auto *train_tok = app.add_subcommand("train-tokenizer", "Learn a byte-level BPE vocabulary from a corpus");
    train_tok->add_option("--corpus", cfg.paths.corpus, "Corpus file");
    train_tok->add_option("--out-dir", cfg.paths.tokenizer_dir, "Directory for vocab.txt and merges.txt");
    train_tok->add_option("--vocab-size", cfg.tokenizer.vocab_size, "Vocabulary size including specials")
        ->capture_default_str();
    train_tok->add_option("--min-frequency", cfg.tokenizer.min_frequency, "Minimum pair count for a merge")
        ->capture_default_str();

    // train
    auto *train_cmd = app.add_subcommand("train", "Train the classifier");
    train_cmd->add_option("--corpus", cfg.paths.corpus, "Training corpus");
    train_cmd->add_option("--labels", cfg.paths.labels, "Training labels");
    train_cmd->add_option("--eval-corpus", cfg.paths.eval_corpus, "Evaluation corpus (optional)");
    train_cmd->add_option("--eval-labels", cfg.paths.eval_labels, "Evaluation labels (optional)");
    train_cmd->add_option("--tokenizer", cfg.paths.tokenizer_dir, "Tokenizer directory");
    train_cmd->add_option("--checkpoint", cfg.paths.checkpoint, "Output checkpoint");
    train_cmd->add_option("--history", cfg.paths.history, "Output history CSV (optional)");
    train_cmd->add_option("--hidden", cfg.model.hidden, "Hidden size")->capture_default_str();
    train_cmd->add_option("--layers", cfg.model.layers, "Encoder layers")->capture_default_str();
    train_cmd->add_option("--heads", cfg.model.heads, "Attention heads")->capture_default_str();
    train_cmd->add_option("--intermediate", cfg.model.intermediate, "Feed-forward size")->capture_default_str();
    train_cmd->add_option("--max-position", cfg.model.max_position, "Position embeddings")->capture_default_str();
    train_cmd->add_option("--dropout", cfg.model.dropout, "Dropout rate")->capture_default_str();
    train_cmd->add_option("--epochs", cfg.train.epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", cfg.train.batch_size, "Mini-batch size")->capture_default_str();
    train_cmd->add_option("--lr", cfg.train.learning_rate, "Learning rate")->capture_default_str();
    train_cmd->add_option("--optimizer", cfg.train.optimizer, "adam or sgd")->capture_default_str();
    train_cmd->add_option("--clip-norm", cfg.train.clip_norm, "Gradient norm clip (0 = off)")->capture_default_str();
    train_cmd->add_option("--eval-every", cfg.train.eval_every, "Evaluate every N steps (0 = per epoch)")
        ->capture_default_str();
    train_cmd->add_option("--threads", cfg.train.threads, "Gradient worker threads")->capture_default_str();
    add_encoding(train_cmd);

    // eval
    auto *eval_cmd = app.add_subcommand("eval", "Classification report on a labeled corpus");
    eval_cmd->add_option("--corpus", cfg.paths.eval_corpus, "Corpus to evaluate");
    eval_cmd->add_option("--labels", cfg.paths.eval_labels, "Its labels");
    eval_cmd->add_option("--tokenizer", cfg.paths.tokenizer_dir, "Tokenizer directory");
    eval_cmd->add_option("--checkpoint", cfg.paths.checkpoint, "Checkpoint");
    eval_cmd->add_option("--report-dir", cfg.paths.report_dir, "Directory for report.txt/json, confusion.csv");
    add_encoding(eval_cmd);

    // infer
    std::string infer_line, infer_corpus, infer_csv;
    std::size_t infer_row = 0;
    auto *infer = app.add_subcommand("infer", "Predict the class of one corpus line or CSV row");
    auto *line_opt = infer->add_option("--line", infer_line, "Hashed corpus line");
    auto *corpus_opt = infer->add_option("--corpus", infer_corpus, "Corpus file (with --row)");
    auto *csv_opt = infer->add_option("--csv", infer_csv, "Feature CSV (with --row); hashed with --hash settings");
    line_opt->excludes(corpus_opt)->excludes(csv_opt);
    corpus_opt->excludes(csv_opt);
    infer->add_option("--row", infer_row, "0-based row of --corpus or --csv")->capture_default_str();
    infer->add_option("--tokenizer", cfg.paths.tokenizer_dir, "Tokenizer directory");
    infer->add_option("--checkpoint", cfg.paths.checkpoint, "Checkpoint");
    add_schema(infer);
    add_hash(infer);
    add_encoding(infer);

    // bench
    std::string bench_line, bench_corpus, bench_out;
    std::size_t bench_runs = 1000, bench_warmup = 10;
    auto *bench = app.add_subcommand("bench", "Single-sample latency (tokenization + forward)");
    bench->add_option("--line", bench_line, "Sample corpus line");
    bench->add_option("--corpus", bench_corpus, "Take the first line of this corpus");
    bench->add_option("--runs", bench_runs, "Timed runs")->capture_default_str();
    bench->add_option("--warmup", bench_warmup, "Untimed warm-up runs (at least 10)")->capture_default_str();
    bench->add_option("--tokenizer", cfg.paths.tokenizer_dir, "Tokenizer directory");
    bench->add_option("--checkpoint", cfg.paths.checkpoint, "Checkpoint");
    bench->add_option("--output", bench_out, "Latency report JSON")->required();
    add_encoding(bench);

    // esd
    std::string esd_out;
    std::size_t esd_min_tail = 5;
    auto *esd = app.add_subcommand("esd", "Weight spectra and power-law exponents");
    esd->add_option("--checkpoint", cfg.paths.checkpoint, "Checkpoint");
    esd->add_option("--output", esd_out, "CSV: layer,n_eigs,alpha,lambda_max")->required();
    esd->add_option("--min-tail", esd_min_tail, "Minimum eigenvalues in the fitted tail")->capture_default_str();

    // summary
    auto *summary = app.add_subcommand("summary", "Print the model configuration table");
    summary->add_option("--vocab-size", cfg.model.vocab_size, "Vocabulary size")->capture_default_str();
    summary->add_option("--hidden", cfg.model.hidden, "Hidden size")->capture_default_str();
    summary->add_option("--layers", cfg.model.layers, "Encoder layers")->capture_default_str();
    summary->add_option("--heads", cfg.model.heads, "Attention heads")->capture_default_str();
    summary->add_option("--intermediate", cfg.model.intermediate, "Feed-forward size")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    try {
        cfg.propagate_seed();

        if (*extract) {
            require_input(extract_in, "--input");
            require_output(extract_out, "--output");
            const auto schema = resolve_schema(cfg);
            FeatureTable table;
            if (looks_like_pcap(extract_in)) {
                table = extract_flows(extract_in, cfg.window_seconds, schema);
            } else {
                table = load_table(extract_in, cfg);
            }
            write_csv(table, extract_out, cfg.label_column);
            err << "extract: " << table.num_rows() << " rows -> " << extract_out << '\n';
        } else if (*synth) {
            require_output(synth_out, "--output");
            const auto table = generate_synthetic(synth_per_class, synth_classes, resolve_schema(cfg), cfg.seed);
            write_csv(table, synth_out, cfg.label_column);
            err << "synth: " << table.num_rows() << " rows -> " << synth_out << '\n';
        } else if (*split) {
            require_input(split_in, "--input");
            require_output(split_train, "--train-out");
            require_output(split_eval, "--eval-out");
            cfg.validate();
            const auto result = split_train_eval(load_table(split_in, cfg), cfg.train_ratio, cfg.seed);
            for (const auto &w : result.warnings) err << "warning: " << w << '\n';
            write_csv(result.train, split_train, cfg.label_column);
            write_csv(result.eval, split_eval, cfg.label_column);
            err << "split: " << result.train.num_rows() << " train / " << result.eval.num_rows() << " eval\n";
        } else if (*encode) {
            require_input(encode_in, "--input");
            require_output(encode_out, "--output");
            if (!exclude.empty()) cfg.exclusions = std::set<std::string>(exclude.begin(), exclude.end());
            cfg.hash.validate();
            const auto table = drop_excluded(load_table(encode_in, cfg));
            const auto data = ppfle::encode_table(table, cfg.hash);
            if (!encode_labels.empty()) require_output(encode_labels, "--labels-out");
            if (!encode_labels.empty() && !data.labels) {
                throw MissingColumn("--labels-out given but " + encode_in + " has no '" + cfg.label_column +
                                    "' column");
            }
            ppfle::write_corpus(data, encode_out, encode_labels);
            err << "encode: " << data.lines.size() << " lines of " << table.num_columns() << " digests -> "
                << encode_out << '\n';
        } else if (*train_tok) {
            require_input(cfg.paths.corpus, "--corpus");
            require_output((fs::path(cfg.paths.tokenizer_dir) / "x").string(), "--out-dir");
            const auto lines = tokenizer::normalize(ppfle::read_lines(cfg.paths.corpus));
            const auto tok = tokenizer::train_bbpe(lines, cfg.tokenizer);
            tokenizer::save_tokenizer(tok, cfg.paths.tokenizer_dir);
            err << "train-tokenizer: " << tok.size() << " tokens, " << tok.merges().size() << " merges -> "
                << cfg.paths.tokenizer_dir << '\n';
        } else if (*train_cmd) {
            require_input(cfg.paths.corpus, "--corpus");
            require_input(cfg.paths.labels, "--labels");
            require_input(cfg.paths.tokenizer_dir, "--tokenizer");
            require_output(cfg.paths.checkpoint, "--checkpoint");
            const bool has_eval = !cfg.paths.eval_corpus.empty();
            if (has_eval) {
                require_input(cfg.paths.eval_corpus, "--eval-corpus");
                require_input(cfg.paths.eval_labels, "--eval-labels");
            }
            if (!cfg.paths.history.empty()) require_output(cfg.paths.history, "--history");
            const auto tok = tokenizer::load_tokenizer(cfg.paths.tokenizer_dir);
            cfg.model.vocab_size = tok.config().vocab_size;
            cfg.validate();

            const auto train_set = make_dataset(tok, ppfle::read_lines(cfg.paths.corpus),
                                                ppfle::read_lines(cfg.paths.labels), cfg.max_len, cfg.chunk_size);
            Dataset eval_set;
            if (has_eval) {
                eval_set = make_dataset(tok, ppfle::read_lines(cfg.paths.eval_corpus),
                                        ppfle::read_lines(cfg.paths.eval_labels), cfg.max_len, cfg.chunk_size);
            }
            err << model_summary(cfg.model);
            auto model = Classifier::build(cfg.model, cfg.seed);
            auto log = [&](const HistoryRecord &r) {
                if (r.split == "eval") {
                    err << "epoch " << r.epoch << " step " << r.step << ": eval loss " << r.loss << ", accuracy "
                        << r.accuracy << '\n';
                }
            };
            auto result = train(std::move(model), train_set, eval_set, cfg.train, log);
            save_checkpoint(result.model, cfg.paths.checkpoint);
            if (!cfg.paths.history.empty()) result.history.write_csv(cfg.paths.history);
            if (const auto *last = result.history.last("train")) {
                err << "train: final step " << last->step << ", loss " << last->loss << " -> "
                    << cfg.paths.checkpoint << '\n';
            }
        } else if (*eval_cmd) {
            require_input(cfg.paths.eval_corpus, "--corpus");
            require_input(cfg.paths.eval_labels, "--labels");
            require_input(cfg.paths.tokenizer_dir, "--tokenizer");
            require_input(cfg.paths.checkpoint, "--checkpoint");
            if (cfg.paths.report_dir.empty()) throw BadConfig("--report-dir is required");
            const auto tok = tokenizer::load_tokenizer(cfg.paths.tokenizer_dir);
            const auto model = load_checkpoint(cfg.paths.checkpoint);
            check_vocab(model, tok);
            cfg.max_len = std::min(cfg.max_len, model.config().max_position);
            const auto data = make_dataset(tok, ppfle::read_lines(cfg.paths.eval_corpus),
                                           ppfle::read_lines(cfg.paths.eval_labels), cfg.max_len, cfg.chunk_size);
            const auto pred = predict(model, data.inputs);
            const Mat<double> probs = pred.probabilities.cast<double>();
            const auto report = classification_report(data.labels, pred.classes, &probs, model.config().n_classes);
            fs::create_directories(cfg.paths.report_dir);
            const auto dir = fs::path(cfg.paths.report_dir);
            write_text((dir / "report.txt").string(), report.to_table());
            write_text((dir / "report.json").string(), report.to_json());
            write_text((dir / "confusion.csv").string(), report.confusion_csv());
            for (const auto &w : report.warnings) err << "warning: " << w << '\n';
            err << "eval: accuracy " << report.accuracy << " on " << report.total << " samples -> "
                << cfg.paths.report_dir << '\n';
        } else if (*infer) {
            require_input(cfg.paths.tokenizer_dir, "--tokenizer");
            require_input(cfg.paths.checkpoint, "--checkpoint");
            std::string line;
            if (!infer_line.empty()) {
                line = infer_line;
            } else if (!infer_corpus.empty()) {
                require_input(infer_corpus, "--corpus");
                const auto lines = ppfle::read_lines(infer_corpus);
                if (infer_row >= lines.size()) throw IoError("--row " + std::to_string(infer_row) + " past end of " + infer_corpus);
                line = lines[infer_row];
            } else if (!infer_csv.empty()) {
                require_input(infer_csv, "--csv");
                const auto table = load_table(infer_csv, cfg);
                if (infer_row >= table.num_rows()) throw IoError("--row " + std::to_string(infer_row) + " past end of " + infer_csv);
                line = ppfle::encode_row(table.rows()[infer_row], table.schema(), cfg.hash).render();
            } else {
                throw BadConfig("one of --line, --corpus or --csv is required");
            }
            const auto tok = tokenizer::load_tokenizer(cfg.paths.tokenizer_dir);
            const auto model = load_checkpoint(cfg.paths.checkpoint);
            check_vocab(model, tok);
            const auto max_len = std::min(cfg.max_len, model.config().max_position);
            const auto pred = predict(model, single_row(tok, line, max_len));
            out << class_name(pred.classes[0], model.config().n_classes) << '\n'
                << format_probs(pred.probabilities.row(0)) << '\n';
        } else if (*bench) {
            require_input(cfg.paths.tokenizer_dir, "--tokenizer");
            require_input(cfg.paths.checkpoint, "--checkpoint");
            require_output(bench_out, "--output");
            std::string line = bench_line;
            if (line.empty()) {
                require_input(bench_corpus, "--corpus");
                const auto lines = ppfle::read_lines(bench_corpus);
                if (lines.empty()) throw EmptyCorpus(bench_corpus + " is empty");
                line = lines[0];
            }
            const auto tok = tokenizer::load_tokenizer(cfg.paths.tokenizer_dir);
            const auto model = load_checkpoint(cfg.paths.checkpoint);
            check_vocab(model, tok);
            const auto report = bench_inference(model, tok, line, bench_runs, bench_warmup,
                                                std::min(cfg.max_len, model.config().max_position));
            write_text(bench_out, report.to_json() + "\n");
            err << "bench: mean " << report.mean_seconds << " s, p50 " << report.p50_seconds << " s, p95 "
                << report.p95_seconds << " s on " << report.hardware << '\n';
        } else if (*esd) {
            require_input(cfg.paths.checkpoint, "--checkpoint");
            require_output(esd_out, "--output");
            const auto report = esd_alpha(load_checkpoint(cfg.paths.checkpoint), esd_min_tail);
            write_text(esd_out, report.to_csv());
            err << "esd: " << report.layers.size() << " matrices -> " << esd_out << '\n';
        } else if (*summary) {
            cfg.model.validate();
            out << model_summary(cfg.model);
        }
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const fs::filesystem_error &e) {
        err << "error: IoError: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    } catch (const std::exception &e) {
        err << "error: internal: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::internal);
    }
    return 0;
}

}  // namespace trafficlm
