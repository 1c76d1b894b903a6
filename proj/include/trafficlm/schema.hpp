#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace trafficlm {

enum class ValueKind { string, unsigned_int, ipv4, bytes, datetime };

std::string_view to_string(ValueKind kind);
ValueKind parse_value_kind(std::string_view text);

struct Column {
    std::string name;
    std::string protocol_layer;
    ValueKind kind = ValueKind::string;

    bool operator==(const Column &) const = default;
};

/// Ordered feature columns plus the subset dropped before encoding.
///
/// Invariants (checked on construction): names unique and non-empty,
/// every excluded name is a column.
class FeatureSchema {
public:
    FeatureSchema() = default;
    FeatureSchema(std::vector<Column> columns, std::set<std::string> excluded = {});

    const std::vector<Column> &columns() const { return columns_; }
    const std::set<std::string> &excluded() const { return excluded_; }
    std::size_t size() const { return columns_.size(); }

    std::optional<std::size_t> index_of(std::string_view name) const;
    bool is_excluded(std::string_view name) const { return excluded_.contains(std::string(name)); }
    std::vector<std::string> names() const;

    /// Schema with the excluded columns removed (and an empty exclusion set).
    FeatureSchema retained() const;

    /// Same columns, exclusion set replaced by `names` intersected with the columns.
    FeatureSchema with_exclusions(const std::set<std::string> &names) const;

    bool operator==(const FeatureSchema &) const = default;

private:
    std::vector<Column> columns_;
    std::set<std::string> excluded_;
};

/// Timestamps, host addresses, duplicated ARP addresses, full URIs and raw payloads.
const std::set<std::string> &default_exclusions();

/// The 61 non-null Edge-IIoTset features in dataset order, with the default
/// exclusion set applied.
FeatureSchema edge_iiot_schema();

/// Builds a schema of string-kind columns with the default exclusions that
/// happen to be present.
FeatureSchema schema_from_names(const std::vector<std::string> &names);

/// Schema text format, one column per line:
///
///     # comment
///     <name> <layer> <kind> [excluded]
///
/// Fields are whitespace separated, so layer names are single words
/// ("Modbus/TCP" is fine). `kind` is one of string, unsigned_int, ipv4, bytes,
/// datetime. The literal `excluded` marks a column dropped before encoding.
FeatureSchema parse_schema(std::string_view text);
FeatureSchema load_schema(const std::string &path);
std::string format_schema(const FeatureSchema &schema);

/// Fixed 15-class label set: Normal followed by the 14 attack types.
inline constexpr std::size_t kNumClasses = 15;

struct ClassLabel {
    std::string_view name;
    int index;
};

const std::array<std::string_view, kNumClasses> &class_names();
std::optional<ClassLabel> find_class(std::string_view name);
ClassLabel class_at(int index);

}  // namespace trafficlm
