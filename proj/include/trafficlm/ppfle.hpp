#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trafficlm/ingest.hpp"

namespace trafficlm::ppfle {

/// "NAME$value": the upper-cased column name, a dollar sign, the raw value.
struct CellString {
    std::string text;
};

CellString concat_cell(std::string_view column_name, std::string_view value);

struct HashConfig {
    /// Any digest OpenSSL knows by name (sha256, sha512, sha1, sha3-256, ...).
    std::string algorithm = "sha256";
    /// Keep only this many leading hex characters; 0 keeps the full digest.
    /// Must be even and at least 8 when set.
    std::size_t truncate_hex = 0;

    /// Throws BadTruncation / BadConfig for unusable settings.
    void validate() const;
    /// Hex characters per digest under this config.
    std::size_t digest_hex_length() const;
};

/// Lowercase hex digest of the UTF-8 bytes of `cell.text`.
std::string hash_cell(const CellString &cell, const HashConfig &config = {});

/// One digest per retained column, in schema order.
struct TokenLine {
    std::vector<std::string> digests;

    std::string render() const;  // space-joined
    bool operator==(const TokenLine &) const = default;
};

struct DataList {
    std::vector<TokenLine> lines;
    std::optional<std::vector<std::string>> labels;

    bool operator==(const DataList &) const = default;
};

/// Hashes each cell of a row. `schema` is the schema the row is aligned to;
/// its excluded columns are skipped, so the row must have one value per schema
/// column (ArityMismatch otherwise).
TokenLine encode_row(const Record &row, const FeatureSchema &schema, const HashConfig &config = {});

/// Encodes every row, skipping excluded columns; labels carried through.
DataList encode_table(const FeatureTable &table, const HashConfig &config = {});

/// One space-joined line per TokenLine. Labels, when present and
/// `labels_path` is non-empty, go one per line to the sidecar file.
void write_corpus(const DataList &data, const std::string &path, const std::string &labels_path = {});
std::string format_corpus(const DataList &data);

/// Reads a corpus (and optional label sidecar) back.
DataList read_corpus(const std::string &path, const std::string &labels_path = {});
std::vector<std::string> read_lines(const std::string &path);

}  // namespace trafficlm::ppfle
