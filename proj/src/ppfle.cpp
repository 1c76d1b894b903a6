#include "trafficlm/ppfle.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include "trafficlm/error.hpp"

namespace trafficlm::ppfle {

namespace {

const EVP_MD *digest_by_name(const std::string &name) {
    const EVP_MD *md = EVP_get_digestbyname(name.c_str());
    if (!md) throw BadConfig("unknown digest algorithm '" + name + "'");
    return md;
}

}  // namespace

CellString concat_cell(std::string_view column_name, std::string_view value) {
    std::string text;
    text.reserve(column_name.size() + 1 + value.size());
    for (char c : column_name) text.push_back((c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c);
    text.push_back('$');
    text.append(value);
    return {std::move(text)};
}

void HashConfig::validate() const {
    const auto full = 2 * static_cast<std::size_t>(EVP_MD_get_size(digest_by_name(algorithm)));
    if (truncate_hex == 0) return;
    if (truncate_hex % 2 != 0 || truncate_hex < 8) {
        throw BadTruncation("hex truncation must be even and >= 8, got " + std::to_string(truncate_hex));
    }
    if (truncate_hex > full) {
        throw BadTruncation("hex truncation " + std::to_string(truncate_hex) + " exceeds " + algorithm +
                            " digest length " + std::to_string(full));
    }
}

std::size_t HashConfig::digest_hex_length() const {
    validate();
    return truncate_hex ? truncate_hex : 2 * static_cast<std::size_t>(EVP_MD_get_size(digest_by_name(algorithm)));
}

std::string hash_cell(const CellString &cell, const HashConfig &config) {
    config.validate();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(cell.text.data(), cell.text.size(), digest, &len, digest_by_name(config.algorithm), nullptr) != 1) {
        throw Error(ErrorKind::internal, "DigestFailed", "EVP_Digest failed for " + config.algorithm);
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned int i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 15];
    }
    if (config.truncate_hex) out.resize(config.truncate_hex);
    return out;
}

std::string TokenLine::render() const {
    std::string out;
    for (std::size_t i = 0; i < digests.size(); ++i) {
        if (i) out.push_back(' ');
        out += digests[i];
    }
    return out;
}

TokenLine encode_row(const Record &row, const FeatureSchema &schema, const HashConfig &config) {
    if (row.size() != schema.size()) {
        throw ArityMismatch("row has " + std::to_string(row.size()) + " values, schema has " +
                            std::to_string(schema.size()) + " columns");
    }
    TokenLine line;
    line.digests.reserve(schema.size() - schema.excluded().size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        const auto &name = schema.columns()[j].name;
        if (schema.is_excluded(name)) continue;
        line.digests.push_back(hash_cell(concat_cell(name, row[j]), config));
    }
    return line;
}

DataList encode_table(const FeatureTable &table, const HashConfig &config) {
    config.validate();
    DataList out;
    out.lines.reserve(table.num_rows());
    for (const auto &row : table.rows()) out.lines.push_back(encode_row(row, table.schema(), config));
    out.labels = table.labels();
    return out;
}

std::string format_corpus(const DataList &data) {
    std::string out;
    for (const auto &line : data.lines) {
        out += line.render();
        out.push_back('\n');
    }
    return out;
}

void write_corpus(const DataList &data, const std::string &path, const std::string &labels_path) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path);
        out << format_corpus(data);
        if (!out) throw IoError("write failed for " + path);
    }
    if (labels_path.empty() || !data.labels) return;
    std::ofstream out(labels_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + labels_path);
    for (const auto &label : *data.labels) out << label << '\n';
    if (!out) throw IoError("write failed for " + labels_path);
}

std::vector<std::string> read_lines(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

DataList read_corpus(const std::string &path, const std::string &labels_path) {
    DataList data;
    for (const auto &text : read_lines(path)) {
        TokenLine line;
        std::istringstream fields(text);
        for (std::string d; fields >> d;) line.digests.push_back(std::move(d));
        data.lines.push_back(std::move(line));
    }
    if (!labels_path.empty()) {
        data.labels = read_lines(labels_path);
        if (data.labels->size() != data.lines.size()) {
            throw RaggedRow(labels_path + " has " + std::to_string(data.labels->size()) + " labels for " +
                            std::to_string(data.lines.size()) + " corpus lines");
        }
    }
    return data;
}

}  // namespace trafficlm::ppfle
