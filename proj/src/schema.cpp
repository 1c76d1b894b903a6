#include "trafficlm/schema.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "trafficlm/error.hpp"

namespace trafficlm {

std::string_view to_string(ValueKind kind) {
    switch (kind) {
        case ValueKind::string: return "string";
        case ValueKind::unsigned_int: return "unsigned_int";
        case ValueKind::ipv4: return "ipv4";
        case ValueKind::bytes: return "bytes";
        case ValueKind::datetime: return "datetime";
    }
    return "string";
}

ValueKind parse_value_kind(std::string_view text) {
    for (auto kind : {ValueKind::string, ValueKind::unsigned_int, ValueKind::ipv4, ValueKind::bytes,
                      ValueKind::datetime}) {
        if (to_string(kind) == text) return kind;
    }
    throw SchemaError("unknown value kind '" + std::string(text) + "'");
}

FeatureSchema::FeatureSchema(std::vector<Column> columns, std::set<std::string> excluded)
    : columns_(std::move(columns)), excluded_(std::move(excluded)) {
    std::unordered_set<std::string> seen;
    for (const auto &c : columns_) {
        if (c.name.empty()) throw SchemaError("empty column name");
        if (!seen.insert(c.name).second) throw SchemaError("duplicate column '" + c.name + "'");
    }
    for (const auto &name : excluded_) {
        if (!seen.contains(name)) throw SchemaError("excluded column '" + name + "' is not in the schema");
    }
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<std::string> FeatureSchema::names() const {
    std::vector<std::string> out;
    out.reserve(columns_.size());
    for (const auto &c : columns_) out.push_back(c.name);
    return out;
}

FeatureSchema FeatureSchema::retained() const {
    std::vector<Column> kept;
    for (const auto &c : columns_) {
        if (!excluded_.contains(c.name)) kept.push_back(c);
    }
    return FeatureSchema(std::move(kept));
}

FeatureSchema FeatureSchema::with_exclusions(const std::set<std::string> &names) const {
    std::set<std::string> present;
    for (const auto &name : names) {
        if (index_of(name)) present.insert(name);
    }
    return FeatureSchema(columns_, std::move(present));
}

const std::set<std::string> &default_exclusions() {
    static const std::set<std::string> names = {
        "frame.time",         "ip.src_host",           "ip.dst_host", "arp.src.proto_ipv4",
        "arp.dst.proto_ipv4", "http.request.full_uri", "tcp.payload", "http.file_data",
    };
    return names;
}

FeatureSchema edge_iiot_schema() {
    using K = ValueKind;
    std::vector<Column> columns = {
        {"frame.time", "Frame", K::datetime},
        {"ip.src_host", "IP", K::string},
        {"ip.dst_host", "IP", K::string},
        {"arp.dst.proto_ipv4", "ARP", K::ipv4},
        {"arp.opcode", "ARP", K::unsigned_int},
        {"arp.hw.size", "ARP", K::unsigned_int},
        {"arp.src.proto_ipv4", "ARP", K::ipv4},
        {"icmp.checksum", "ICMP", K::unsigned_int},
        {"icmp.seq_le", "ICMP", K::unsigned_int},
        {"icmp.transmit_timestamp", "ICMP", K::unsigned_int},
        {"icmp.unused", "ICMP", K::bytes},
        {"http.file_data", "HTTP", K::string},
        {"http.content_length", "HTTP", K::unsigned_int},
        {"http.request.uri.query", "HTTP", K::string},
        {"http.request.method", "HTTP", K::string},
        {"http.referer", "HTTP", K::string},
        {"http.request.full_uri", "HTTP", K::string},
        {"http.request.version", "HTTP", K::string},
        {"http.response", "HTTP", K::unsigned_int},
        {"http.tls_port", "HTTP", K::unsigned_int},
        {"tcp.ack", "TCP", K::unsigned_int},
        {"tcp.ack_raw", "TCP", K::unsigned_int},
        {"tcp.checksum", "TCP", K::unsigned_int},
        {"tcp.connection.fin", "TCP", K::unsigned_int},
        {"tcp.connection.rst", "TCP", K::unsigned_int},
        {"tcp.connection.syn", "TCP", K::unsigned_int},
        {"tcp.connection.synack", "TCP", K::unsigned_int},
        {"tcp.dstport", "TCP", K::unsigned_int},
        {"tcp.flags", "TCP", K::unsigned_int},
        {"tcp.flags.ack", "TCP", K::unsigned_int},
        {"tcp.len", "TCP", K::unsigned_int},
        {"tcp.options", "TCP", K::bytes},
        {"tcp.payload", "TCP", K::bytes},
        {"tcp.seq", "TCP", K::unsigned_int},
        {"tcp.srcport", "TCP", K::unsigned_int},
        {"udp.port", "UDP", K::unsigned_int},
        {"udp.stream", "UDP", K::unsigned_int},
        {"udp.time_delta", "UDP", K::string},
        {"dns.qry.name", "DNS", K::string},
        {"dns.qry.name.len", "DNS", K::unsigned_int},
        {"dns.qry.qu", "DNS", K::unsigned_int},
        {"dns.qry.type", "DNS", K::unsigned_int},
        {"dns.retransmission", "DNS", K::unsigned_int},
        {"dns.retransmit_request", "DNS", K::unsigned_int},
        {"dns.retransmit_request_in", "DNS", K::unsigned_int},
        {"mqtt.conack.flags", "MQTT", K::unsigned_int},
        {"mqtt.conflag.cleansess", "MQTT", K::unsigned_int},
        {"mqtt.conflags", "MQTT", K::unsigned_int},
        {"mqtt.hdrflags", "MQTT", K::unsigned_int},
        {"mqtt.len", "MQTT", K::unsigned_int},
        {"mqtt.msg_decoded_as", "MQTT", K::string},
        {"mqtt.msg", "MQTT", K::bytes},
        {"mqtt.msgtype", "MQTT", K::unsigned_int},
        {"mqtt.proto_len", "MQTT", K::unsigned_int},
        {"mqtt.protoname", "MQTT", K::string},
        {"mqtt.topic", "MQTT", K::string},
        {"mqtt.topic_len", "MQTT", K::unsigned_int},
        {"mqtt.ver", "MQTT", K::unsigned_int},
        {"mbtcp.len", "Modbus/TCP", K::unsigned_int},
        {"mbtcp.trans_id", "Modbus/TCP", K::unsigned_int},
        {"mbtcp.unit_id", "Modbus/TCP", K::unsigned_int},
    };
    return FeatureSchema(std::move(columns), default_exclusions());
}

FeatureSchema schema_from_names(const std::vector<std::string> &names) {
    std::vector<Column> columns;
    columns.reserve(names.size());
    for (const auto &n : names) columns.push_back({n, "", ValueKind::string});
    return FeatureSchema(std::move(columns)).with_exclusions(default_exclusions());
}

FeatureSchema parse_schema(std::string_view text) {
    std::vector<Column> columns;
    std::set<std::string> excluded;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::vector<std::string> parts;
        for (std::string f; fields >> f;) parts.push_back(f);
        if (parts.empty()) continue;
        if (parts.size() < 3 || parts.size() > 4 || (parts.size() == 4 && parts[3] != "excluded")) {
            throw SchemaError("line " + std::to_string(line_no) + ": expected '<name> <layer> <kind> [excluded]'");
        }
        columns.push_back({parts[0], parts[1], parse_value_kind(parts[2])});
        if (parts.size() == 4) excluded.insert(parts[0]);
    }
    return FeatureSchema(std::move(columns), std::move(excluded));
}

FeatureSchema load_schema(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_schema(buffer.str());
}

std::string format_schema(const FeatureSchema &schema) {
    std::ostringstream out;
    out << "# name layer kind [excluded]\n";
    for (const auto &c : schema.columns()) {
        out << c.name << ' ' << (c.protocol_layer.empty() ? "-" : c.protocol_layer) << ' ' << to_string(c.kind);
        if (schema.is_excluded(c.name)) out << " excluded";
        out << '\n';
    }
    return out.str();
}

const std::array<std::string_view, kNumClasses> &class_names() {
    // Edge-IIoTset class distribution order (largest class first).
    static const std::array<std::string_view, kNumClasses> names = {
        "Normal",         "DDoS_UDP", "DDoS_ICMP", "SQL_injection", "Password",
        "Vulnerability_scanner", "DDoS_TCP", "DDoS_HTTP", "Uploading", "Backdoor",
        "Port_Scanning",  "XSS",      "Ransomware", "MITM",         "Fingerprinting",
    };
    return names;
}

std::optional<ClassLabel> find_class(std::string_view name) {
    const auto &names = class_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return ClassLabel{names[i], static_cast<int>(i)};
    }
    return std::nullopt;
}

ClassLabel class_at(int index) {
    if (index < 0 || index >= static_cast<int>(kNumClasses)) {
        throw LabelOutOfRange("class index " + std::to_string(index));
    }
    return {class_names()[static_cast<std::size_t>(index)], index};
}

}  // namespace trafficlm
