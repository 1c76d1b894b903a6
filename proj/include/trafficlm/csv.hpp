#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace trafficlm::csv {

using Record = std::vector<std::string>;

/// Parses RFC-4180 text: quoted fields, doubled quotes, CRLF or LF line ends.
/// A UTF-8 byte-order mark at the start is skipped. Blank lines are dropped.
std::vector<Record> parse(std::string_view text);

std::vector<Record> read_file(const std::string &path);

/// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

void write_record(std::ostream &out, const Record &record);

}  // namespace trafficlm::csv
