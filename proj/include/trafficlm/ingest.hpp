#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trafficlm/schema.hpp"

namespace trafficlm {

using Record = std::vector<std::string>;

/// Rectangular table of feature values aligned to a schema, with optional
/// per-row class labels.
class FeatureTable {
public:
    FeatureTable() = default;
    /// Throws RaggedRow when a row's arity differs from the schema, or when
    /// labels are present but not one per row.
    FeatureTable(FeatureSchema schema, std::vector<Record> rows,
                 std::optional<std::vector<std::string>> labels = std::nullopt);

    const FeatureSchema &schema() const { return schema_; }
    const std::vector<Record> &rows() const { return rows_; }
    const std::optional<std::vector<std::string>> &labels() const { return labels_; }
    bool has_labels() const { return labels_.has_value(); }
    std::size_t num_rows() const { return rows_.size(); }
    std::size_t num_columns() const { return schema_.size(); }

    /// Subset of rows in the given order.
    FeatureTable select_rows(const std::vector<std::size_t> &indices) const;

    bool operator==(const FeatureTable &) const = default;

private:
    FeatureSchema schema_;
    std::vector<Record> rows_;
    std::optional<std::vector<std::string>> labels_;
};

struct CsvOptions {
    /// Column holding the class name; split out of the feature columns.
    std::optional<std::string> label_column;
    /// Reject labels outside the fixed 15-class set.
    bool enforce_label_set = false;
};

/// Reads a CSV file and reorders its columns to `schema` order. Header columns
/// the schema does not name are ignored. Empty cells become "0".
FeatureTable load_csv(const std::string &path, const FeatureSchema &schema, const CsvOptions &options = {});
FeatureTable parse_csv(std::string_view text, const FeatureSchema &schema, const CsvOptions &options = {});

/// Same, with the schema taken from the header (every non-label column, as
/// string kind, default exclusions applied where present).
FeatureTable load_csv(const std::string &path, const CsvOptions &options = {});
FeatureTable parse_csv(std::string_view text, const CsvOptions &options = {});

/// Writes header + rows in schema order; labels, when present, go to a final
/// column named `label_column`.
void write_csv(const FeatureTable &table, const std::string &path, const std::string &label_column = "label");
std::string format_csv(const FeatureTable &table, const std::string &label_column = "label");

/// Removes the schema's excluded columns. Idempotent.
FeatureTable drop_excluded(const FeatureTable &table);

struct SplitResult {
    FeatureTable train;
    FeatureTable eval;
    std::vector<std::size_t> train_rows;  // indices into the input table
    std::vector<std::size_t> eval_rows;
    /// One entry per class too small to stratify (its rows all go to train).
    std::vector<std::string> warnings;
};

/// Stratified split: each class contributes round(ratio * count) rows to
/// train and the rest to eval, chosen by a seeded shuffle. Both parts keep the
/// input's row order. Requires 0 < ratio < 1 and labels.
SplitResult split_train_eval(const FeatureTable &table, double ratio, std::uint64_t seed);

/// Separable-by-construction labeled data: each class owns distinct values on
/// several signature columns; other columns draw from a background
/// distribution shared by all classes, and excluded columns get per-row
/// high-cardinality values. Rows cycle through the classes in order.
FeatureTable generate_synthetic(std::size_t n_per_class, std::size_t n_classes, const FeatureSchema &schema,
                                std::uint64_t seed);

}  // namespace trafficlm
