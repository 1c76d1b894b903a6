#include "trafficlm/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "trafficlm/csv.hpp"
#include "trafficlm/error.hpp"
#include "trafficlm/rng.hpp"

namespace trafficlm {

FeatureTable::FeatureTable(FeatureSchema schema, std::vector<Record> rows,
                           std::optional<std::vector<std::string>> labels)
    : schema_(std::move(schema)), rows_(std::move(rows)), labels_(std::move(labels)) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size() != schema_.size()) {
            throw RaggedRow("row " + std::to_string(i) + " has " + std::to_string(rows_[i].size()) +
                            " values, schema has " + std::to_string(schema_.size()) + " columns");
        }
    }
    if (labels_ && labels_->size() != rows_.size()) {
        throw RaggedRow(std::to_string(labels_->size()) + " labels for " + std::to_string(rows_.size()) + " rows");
    }
}

FeatureTable FeatureTable::select_rows(const std::vector<std::size_t> &indices) const {
    std::vector<Record> rows;
    rows.reserve(indices.size());
    std::optional<std::vector<std::string>> labels;
    if (labels_) labels.emplace().reserve(indices.size());
    for (auto i : indices) {
        rows.push_back(rows_.at(i));
        if (labels_) labels->push_back((*labels_)[i]);
    }
    return FeatureTable(schema_, std::move(rows), std::move(labels));
}

namespace {

std::string read_text(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

FeatureTable table_from_records(std::vector<csv::Record> records, const FeatureSchema &schema,
                                const CsvOptions &options) {
    if (records.empty()) throw MissingColumn("CSV has no header row");
    const auto &header = records.front();

    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

    std::vector<std::size_t> source;
    source.reserve(schema.size());
    for (const auto &col : schema.columns()) {
        auto it = position.find(col.name);
        if (it == position.end()) throw MissingColumn("column '" + col.name + "' not in CSV header");
        source.push_back(it->second);
    }

    std::optional<std::size_t> label_pos;
    if (options.label_column) {
        auto it = position.find(*options.label_column);
        if (it == position.end()) throw MissingColumn("label column '" + *options.label_column + "' not in CSV header");
        label_pos = it->second;
    }

    std::vector<Record> rows;
    rows.reserve(records.size() - 1);
    std::optional<std::vector<std::string>> labels;
    if (label_pos) labels.emplace().reserve(records.size() - 1);

    for (std::size_t r = 1; r < records.size(); ++r) {
        auto &rec = records[r];
        if (rec.size() != header.size()) {
            throw RaggedRow("CSV line " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                            " fields, header has " + std::to_string(header.size()));
        }
        Record row;
        row.reserve(source.size());
        for (auto s : source) row.push_back(rec[s].empty() ? std::string("0") : std::move(rec[s]));
        rows.push_back(std::move(row));
        if (label_pos) {
            auto &label = rec[*label_pos];
            if (options.enforce_label_set && !find_class(label)) {
                throw UnknownLabel("CSV line " + std::to_string(r + 1) + ": '" + label + "'");
            }
            labels->push_back(std::move(label));
        }
    }
    return FeatureTable(schema, std::move(rows), std::move(labels));
}

FeatureSchema schema_from_header(const csv::Record &header, const CsvOptions &options) {
    std::vector<std::string> names;
    for (const auto &h : header) {
        if (options.label_column && h == *options.label_column) continue;
        names.push_back(h);
    }
    return schema_from_names(names);
}

}  // namespace

FeatureTable parse_csv(std::string_view text, const FeatureSchema &schema, const CsvOptions &options) {
    return table_from_records(csv::parse(text), schema, options);
}

FeatureTable load_csv(const std::string &path, const FeatureSchema &schema, const CsvOptions &options) {
    return parse_csv(read_text(path), schema, options);
}

FeatureTable parse_csv(std::string_view text, const CsvOptions &options) {
    auto records = csv::parse(text);
    if (records.empty()) throw MissingColumn("CSV has no header row");
    auto schema = schema_from_header(records.front(), options);
    return table_from_records(std::move(records), schema, options);
}

FeatureTable load_csv(const std::string &path, const CsvOptions &options) {
    return parse_csv(read_text(path), options);
}

std::string format_csv(const FeatureTable &table, const std::string &label_column) {
    std::ostringstream out;
    auto header = table.schema().names();
    if (table.has_labels()) header.push_back(label_column);
    csv::write_record(out, header);
    for (std::size_t i = 0; i < table.num_rows(); ++i) {
        auto rec = table.rows()[i];
        if (table.has_labels()) rec.push_back((*table.labels())[i]);
        csv::write_record(out, rec);
    }
    return out.str();
}

void write_csv(const FeatureTable &table, const std::string &path, const std::string &label_column) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << format_csv(table, label_column);
    if (!out) throw IoError("write failed for " + path);
}

FeatureTable drop_excluded(const FeatureTable &table) {
    const auto &schema = table.schema();
    if (schema.excluded().empty()) return table;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (!schema.is_excluded(schema.columns()[i].name)) keep.push_back(i);
    }
    std::vector<Record> rows;
    rows.reserve(table.num_rows());
    for (const auto &row : table.rows()) {
        Record r;
        r.reserve(keep.size());
        for (auto k : keep) r.push_back(row[k]);
        rows.push_back(std::move(r));
    }
    return FeatureTable(schema.retained(), std::move(rows), table.labels());
}

SplitResult split_train_eval(const FeatureTable &table, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw BadConfig("split ratio must be in (0, 1)");
    if (!table.has_labels()) throw BadLabel("split_train_eval needs a labeled table");

    // Group rows by label; std::map gives a label order independent of row order.
    std::map<std::string, std::vector<std::size_t>> by_class;
    const auto &labels = *table.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    SplitResult result;
    for (auto &[label, rows] : by_class) {
        if (rows.size() < 2) {
            result.warnings.push_back("class '" + label + "' has " + std::to_string(rows.size()) +
                                      " sample(s); assigned to train without stratification");
            result.train_rows.insert(result.train_rows.end(), rows.begin(), rows.end());
            continue;
        }
        Rng rng(mix_seed(seed, fnv1a(label), rows.size()));
        auto shuffled = rows;
        rng.shuffle(std::span<std::size_t>(shuffled));
        const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(rows.size())));
        result.train_rows.insert(result.train_rows.end(), shuffled.begin(), shuffled.begin() + n_train);
        result.eval_rows.insert(result.eval_rows.end(), shuffled.begin() + n_train, shuffled.end());
    }
    std::sort(result.train_rows.begin(), result.train_rows.end());
    std::sort(result.eval_rows.begin(), result.eval_rows.end());
    result.train = table.select_rows(result.train_rows);
    result.eval = table.select_rows(result.eval_rows);
    return result;
}

namespace {

std::string random_value(Rng &rng, ValueKind kind) {
    char buf[64];
    switch (kind) {
        case ValueKind::unsigned_int:
            return std::to_string(1 + rng.below(65535));
        case ValueKind::ipv4:
            std::snprintf(buf, sizeof buf, "192.168.%u.%u", static_cast<unsigned>(rng.below(256)),
                          static_cast<unsigned>(1 + rng.below(254)));
            return buf;
        case ValueKind::bytes: {
            static constexpr char hex[] = "0123456789abcdef";
            std::string out;
            const auto n = 2 * (2 + rng.below(7));
            for (std::uint64_t i = 0; i < n; ++i) {
                if (i && i % 2 == 0) out.push_back(':');
                out.push_back(hex[rng.below(16)]);
            }
            return out;
        }
        case ValueKind::datetime:
            std::snprintf(buf, sizeof buf, "2021 %02u:%02u:%02u.%09u", static_cast<unsigned>(rng.below(24)),
                          static_cast<unsigned>(rng.below(60)), static_cast<unsigned>(rng.below(60)),
                          static_cast<unsigned>(rng.below(1000000000)));
            return buf;
        case ValueKind::string: {
            static constexpr char alpha[] = "abcdefghijklmnopqrstuvwxyz";
            std::string out = "/";
            const auto n = 4 + rng.below(8);
            for (std::uint64_t i = 0; i < n; ++i) out.push_back(alpha[rng.below(26)]);
            return out;
        }
    }
    return "0";
}

// Draws a value of `kind` not already in `taken`, then records it.
std::string fresh_value(Rng &rng, ValueKind kind, std::set<std::string> &taken) {
    for (;;) {
        auto v = random_value(rng, kind);
        if (v != "0" && taken.insert(v).second) return v;
    }
}

}  // namespace

FeatureTable generate_synthetic(std::size_t n_per_class, std::size_t n_classes, const FeatureSchema &schema,
                                std::uint64_t seed) {
    if (n_classes == 0 || n_classes > kNumClasses) throw BadConfig("n_classes must be in [1, 15]");

    constexpr std::size_t kSignatureColumns = 4;
    constexpr std::size_t kSignatureValues = 2;
    constexpr std::size_t kBackgroundValues = 4;
    constexpr double kBackgroundZero = 0.6;

    const auto &cols = schema.columns();
    std::vector<std::size_t> retained;
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (!schema.is_excluded(cols[j].name)) retained.push_back(j);
    }
    if (retained.empty()) throw BadConfig("schema has no retained columns to carry class signal");

    Rng rng(mix_seed(seed, 0x5157));
    std::vector<std::set<std::string>> taken(cols.size());

    // signature[c] maps column -> class-owned values
    std::vector<std::map<std::size_t, std::vector<std::string>>> signature(n_classes);
    const auto n_sig = std::min(kSignatureColumns, retained.size());
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto pool = retained;
        rng.shuffle(std::span<std::size_t>(pool));
        for (std::size_t s = 0; s < n_sig; ++s) {
            auto &values = signature[c][pool[s]];
            for (std::size_t v = 0; v < kSignatureValues; ++v) {
                values.push_back(fresh_value(rng, cols[pool[s]].kind, taken[pool[s]]));
            }
        }
    }

    std::vector<std::vector<std::string>> background(cols.size());
    for (auto j : retained) {
        for (std::size_t v = 0; v < kBackgroundValues; ++v) {
            background[j].push_back(fresh_value(rng, cols[j].kind, taken[j]));
        }
    }

    std::vector<Record> rows;
    std::vector<std::string> labels;
    rows.reserve(n_per_class * n_classes);
    labels.reserve(n_per_class * n_classes);
    for (std::size_t i = 0; i < n_per_class * n_classes; ++i) {
        const auto c = i % n_classes;
        Record row(cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (schema.is_excluded(cols[j].name)) {
                row[j] = random_value(rng, cols[j].kind);
            } else if (auto it = signature[c].find(j); it != signature[c].end()) {
                row[j] = it->second[rng.below(it->second.size())];
            } else if (rng.uniform() < kBackgroundZero) {
                row[j] = "0";
            } else {
                row[j] = background[j][rng.below(background[j].size())];
            }
        }
        rows.push_back(std::move(row));
        labels.emplace_back(class_names()[c]);
    }
    return FeatureTable(schema, std::move(rows), std::move(labels));
}

}  // namespace trafficlm
