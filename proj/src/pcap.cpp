#include "trafficlm/pcap.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <tuple>
#include <unordered_map>

#include "trafficlm/error.hpp"

namespace trafficlm {

namespace {

constexpr std::uint32_t kMagicMicro = 0xA1B2C3D4;
constexpr std::uint32_t kMagicNano = 0xA1B23C4D;
constexpr std::uint32_t kMaxRecord = 1u << 18;

enum LinkType : std::uint32_t {
    link_null = 0,
    link_ethernet = 1,
    link_raw = 101,
    link_linux_sll = 113,
    link_ipv4 = 228,
};

std::uint16_t be16(const std::uint8_t *p) { return static_cast<std::uint16_t>(p[0] << 8 | p[1]); }
std::uint32_t be32(const std::uint8_t *p) {
    return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 | p[3];
}

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, bool swap) : data_(data), swap_(swap) {}

    std::uint32_t u32(std::size_t off) const {
        std::uint32_t v = std::uint32_t(data_[off]) | std::uint32_t(data_[off + 1]) << 8 |
                          std::uint32_t(data_[off + 2]) << 16 | std::uint32_t(data_[off + 3]) << 24;
        return swap_ ? __builtin_bswap32(v) : v;
    }

private:
    std::span<const std::uint8_t> data_;
    bool swap_;
};

struct Packet {
    std::int64_t ts_ns = 0;
    std::span<const std::uint8_t> bytes;
};

std::string ipv4_text(const std::uint8_t *p) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", p[0], p[1], p[2], p[3]);
    return buf;
}

std::string hex_bytes(std::span<const std::uint8_t> bytes, bool colons) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (colons && i) out.push_back(':');
        out.push_back(digits[bytes[i] >> 4]);
        out.push_back(digits[bytes[i] & 15]);
    }
    return out;
}

std::string timestamp_text(std::int64_t ts_ns) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%lld.%09lld", static_cast<long long>(ts_ns / 1000000000),
                  static_cast<long long>(ts_ns % 1000000000));
    return buf;
}

using Fields = std::map<std::string, std::string>;

struct FlowKey {
    std::uint32_t src = 0, dst = 0;
    std::uint16_t sport = 0, dport = 0;
    std::uint16_t proto = 0;  // IP protocol, or 0x0806 for ARP
    std::int64_t window = 0;

    auto tie() const { return std::tie(src, dst, sport, dport, proto, window); }
    bool operator<(const FlowKey &o) const { return tie() < o.tie(); }
};

std::string_view as_text(std::span<const std::uint8_t> bytes) {
    return {reinterpret_cast<const char *>(bytes.data()), bytes.size()};
}

void parse_http(std::span<const std::uint8_t> payload, Fields &f) {
    static constexpr std::string_view methods[] = {"GET ",    "POST ",    "PUT ",     "HEAD ",  "DELETE ",
                                                   "OPTIONS ", "PATCH ", "CONNECT ", "TRACE "};
    const auto text = as_text(payload);
    const auto header_end = text.find("\r\n\r\n");
    const auto head = text.substr(0, header_end);
    const auto line_end = head.find("\r\n");
    const auto first = head.substr(0, line_end);

    auto header_value = [&](std::string_view name) -> std::optional<std::string> {
        std::size_t pos = line_end;
        while (pos != std::string_view::npos && pos < head.size()) {
            const auto start = pos + 2;
            const auto end = head.find("\r\n", start);
            const auto line = head.substr(start, end == std::string_view::npos ? head.npos : end - start);
            const auto colon = line.find(':');
            if (colon != std::string_view::npos && colon == name.size()) {
                bool same = true;
                for (std::size_t i = 0; i < name.size(); ++i) {
                    if (std::tolower(static_cast<unsigned char>(line[i])) != name[i]) same = false;
                }
                if (same) {
                    auto v = line.substr(colon + 1);
                    while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
                    return std::string(v);
                }
            }
            pos = end;
        }
        return std::nullopt;
    };

    bool is_http = false;
    if (first.starts_with("HTTP/1.")) {
        is_http = true;
        f["http.response"] = "1";
        f["http.request.version"] = std::string(first.substr(0, first.find(' ')));
    } else {
        for (auto m : methods) {
            if (!first.starts_with(m)) continue;
            is_http = true;
            const auto uri_start = m.size();
            const auto uri_end = first.find(' ', uri_start);
            const auto uri = first.substr(uri_start, uri_end == std::string_view::npos ? first.npos : uri_end - uri_start);
            f["http.request.method"] = std::string(m.substr(0, m.size() - 1));
            if (uri_end != std::string_view::npos) f["http.request.version"] = std::string(first.substr(uri_end + 1));
            if (auto q = uri.find('?'); q != std::string_view::npos && q + 1 < uri.size()) {
                f["http.request.uri.query"] = std::string(uri.substr(q + 1));
            }
            auto host = header_value("host");
            f["http.request.full_uri"] = "http://" + host.value_or("") + std::string(uri);
            break;
        }
    }
    if (!is_http) return;
    if (auto cl = header_value("content-length")) f["http.content_length"] = *cl;
    if (auto ref = header_value("referer")) f["http.referer"] = *ref;
    if (header_end != std::string_view::npos && header_end + 4 < text.size()) {
        f["http.file_data"] = std::string(text.substr(header_end + 4));
    }
}

void parse_dns(std::span<const std::uint8_t> p, Fields &f) {
    if (p.size() < 12 || be16(p.data() + 4) == 0) return;
    std::size_t pos = 12;
    std::string name;
    while (pos < p.size()) {
        const auto len = p[pos];
        if (len == 0 || (len & 0xC0)) break;
        if (pos + 1 + len > p.size()) return;
        if (!name.empty()) name.push_back('.');
        name.append(as_text(p.subspan(pos + 1, len)));
        pos += 1 + len;
    }
    if (pos >= p.size() || p[pos] != 0 || pos + 5 > p.size()) return;
    f["dns.qry.name"] = name;
    f["dns.qry.name.len"] = std::to_string(name.size());
    f["dns.qry.type"] = std::to_string(be16(p.data() + pos + 1));
    f["dns.qry.qu"] = std::to_string(be16(p.data() + pos + 3) >> 15);
}

void parse_mqtt(std::span<const std::uint8_t> p, Fields &f) {
    if (p.size() < 2) return;
    const std::uint8_t hdr = p[0];
    std::uint32_t remaining = 0;
    std::size_t pos = 1;
    for (int shift = 0; pos < p.size() && shift < 28; shift += 7) {
        const auto b = p[pos++];
        remaining |= std::uint32_t(b & 0x7F) << shift;
        if (!(b & 0x80)) break;
    }
    const auto type = hdr >> 4;
    f["mqtt.hdrflags"] = std::to_string(hdr);
    f["mqtt.msgtype"] = std::to_string(type);
    f["mqtt.len"] = std::to_string(remaining);
    const auto body = p.subspan(std::min(pos, p.size()));
    if (type == 1 && body.size() >= 4) {
        const auto name_len = be16(body.data());
        if (body.size() < 2u + name_len + 2u) return;
        f["mqtt.proto_len"] = std::to_string(name_len);
        f["mqtt.protoname"] = std::string(as_text(body.subspan(2, name_len)));
        f["mqtt.ver"] = std::to_string(body[2 + name_len]);
        const auto flags = body[3 + name_len];
        f["mqtt.conflags"] = std::to_string(flags);
        f["mqtt.conflag.cleansess"] = std::to_string((flags >> 1) & 1);
    } else if (type == 3 && body.size() >= 2) {
        const auto topic_len = be16(body.data());
        if (body.size() < 2u + topic_len) return;
        f["mqtt.topic_len"] = std::to_string(topic_len);
        f["mqtt.topic"] = std::string(as_text(body.subspan(2, topic_len)));
        const std::size_t skip = 2 + topic_len + (((hdr >> 1) & 3) ? 2 : 0);
        if (skip < body.size()) f["mqtt.msg"] = hex_bytes(body.subspan(skip), false);
    }
}

void parse_modbus(std::span<const std::uint8_t> p, Fields &f) {
    if (p.size() < 7) return;
    f["mbtcp.trans_id"] = std::to_string(be16(p.data()));
    f["mbtcp.len"] = std::to_string(be16(p.data() + 4));
    f["mbtcp.unit_id"] = std::to_string(p[6]);
}

struct Dissected {
    FlowKey key;
    Fields fields;
};

std::optional<Dissected> dissect_arp(std::span<const std::uint8_t> p) {
    if (p.size() < 28 || be16(p.data() + 2) != 0x0800 || p[5] != 4) return std::nullopt;
    Dissected d;
    d.key.src = be32(p.data() + 14);
    d.key.dst = be32(p.data() + 24);
    d.key.proto = 0x0806;
    d.fields["arp.opcode"] = std::to_string(be16(p.data() + 6));
    d.fields["arp.hw.size"] = std::to_string(p[4]);
    d.fields["arp.src.proto_ipv4"] = ipv4_text(p.data() + 14);
    d.fields["arp.dst.proto_ipv4"] = ipv4_text(p.data() + 24);
    return d;
}

std::optional<Dissected> dissect_ipv4(std::span<const std::uint8_t> p) {
    if (p.size() < 20 || (p[0] >> 4) != 4) return std::nullopt;
    const std::size_t ihl = (p[0] & 15u) * 4u;
    const std::size_t total = be16(p.data() + 2);
    if (ihl < 20 || p.size() < ihl) return std::nullopt;
    const auto end = std::min(p.size(), std::max(total, ihl));
    Dissected d;
    d.key.src = be32(p.data() + 12);
    d.key.dst = be32(p.data() + 16);
    d.key.proto = p[9];
    d.fields["ip.src_host"] = ipv4_text(p.data() + 12);
    d.fields["ip.dst_host"] = ipv4_text(p.data() + 16);

    const bool first_fragment = (be16(p.data() + 6) & 0x1FFF) == 0;
    if (!first_fragment) return d;
    const auto l4 = p.subspan(ihl, end - ihl);

    switch (d.key.proto) {
        case 1: {  // ICMP
            if (l4.size() < 8) break;
            d.fields["icmp.checksum"] = std::to_string(be16(l4.data() + 2));
            const auto type = l4[0];
            if (type == 0 || type == 8 || type == 13 || type == 14) {
                d.fields["icmp.seq_le"] = std::to_string(l4[6] | (l4[7] << 8));
            }
            if ((type == 13 || type == 14) && l4.size() >= 20) {
                d.fields["icmp.transmit_timestamp"] = std::to_string(be32(l4.data() + 16));
            }
            if (type == 3 || type == 11) d.fields["icmp.unused"] = hex_bytes(l4.subspan(4, 4), true);
            break;
        }
        case 6: {  // TCP
            if (l4.size() < 20) break;
            const std::size_t data_off = (l4[12] >> 4) * 4u;
            if (data_off < 20 || data_off > l4.size()) break;
            d.key.sport = be16(l4.data());
            d.key.dport = be16(l4.data() + 2);
            const auto flags = static_cast<unsigned>(l4[13]);
            const bool syn = flags & 0x02, ack = flags & 0x10;
            d.fields["tcp.srcport"] = std::to_string(d.key.sport);
            d.fields["tcp.dstport"] = std::to_string(d.key.dport);
            d.fields["tcp.seq"] = std::to_string(be32(l4.data() + 4));
            d.fields["tcp.ack"] = std::to_string(be32(l4.data() + 8));
            d.fields["tcp.ack_raw"] = std::to_string(be32(l4.data() + 8));
            d.fields["tcp.flags"] = std::to_string(flags);
            d.fields["tcp.flags.ack"] = ack ? "1" : "0";
            d.fields["tcp.checksum"] = std::to_string(be16(l4.data() + 16));
            d.fields["tcp.connection.syn"] = (syn && !ack) ? "1" : "0";
            d.fields["tcp.connection.synack"] = (syn && ack) ? "1" : "0";
            d.fields["tcp.connection.fin"] = (flags & 0x01) ? "1" : "0";
            d.fields["tcp.connection.rst"] = (flags & 0x04) ? "1" : "0";
            if (data_off > 20) d.fields["tcp.options"] = hex_bytes(l4.subspan(20, data_off - 20), false);
            const auto payload = l4.subspan(data_off);
            d.fields["tcp.len"] = std::to_string(payload.size());
            if (!payload.empty()) {
                d.fields["tcp.payload"] = hex_bytes(payload, false);
                parse_http(payload, d.fields);
                if (d.key.sport == 1883 || d.key.dport == 1883) parse_mqtt(payload, d.fields);
                if (d.key.sport == 502 || d.key.dport == 502) parse_modbus(payload, d.fields);
            }
            break;
        }
        case 17: {  // UDP
            if (l4.size() < 8) break;
            d.key.sport = be16(l4.data());
            d.key.dport = be16(l4.data() + 2);
            d.fields["udp.port"] = std::to_string(d.key.dport);
            if (d.key.sport == 53 || d.key.dport == 53 || d.key.sport == 5353 || d.key.dport == 5353) {
                parse_dns(l4.subspan(8), d.fields);
            }
            break;
        }
        default:
            break;
    }
    return d;
}

std::optional<Dissected> dissect(std::uint32_t link, std::span<const std::uint8_t> frame) {
    std::uint16_t ethertype = 0;
    std::span<const std::uint8_t> l3;
    switch (link) {
        case link_ethernet: {
            if (frame.size() < 14) return std::nullopt;
            std::size_t off = 12;
            ethertype = be16(frame.data() + off);
            while ((ethertype == 0x8100 || ethertype == 0x88A8) && frame.size() >= off + 6) {
                off += 4;
                ethertype = be16(frame.data() + off);
            }
            l3 = frame.subspan(off + 2);
            break;
        }
        case link_raw:
        case link_ipv4:
            ethertype = 0x0800;
            l3 = frame;
            break;
        case link_linux_sll:
            if (frame.size() < 16) return std::nullopt;
            ethertype = be16(frame.data() + 14);
            l3 = frame.subspan(16);
            break;
        case link_null: {
            if (frame.size() < 4) return std::nullopt;
            const std::uint32_t family = frame[0] | frame[1] << 8 | frame[2] << 16 | std::uint32_t(frame[3]) << 24;
            if (family != 2 && __builtin_bswap32(family) != 2) return std::nullopt;
            ethertype = 0x0800;
            l3 = frame.subspan(4);
            break;
        }
        default:
            throw MalformedCapture("unsupported link type " + std::to_string(link));
    }
    if (ethertype == 0x0800) return dissect_ipv4(l3);
    if (ethertype == 0x0806) return dissect_arp(l3);
    return std::nullopt;
}

}  // namespace

const std::vector<std::string> &supported_flow_columns() {
    static const std::vector<std::string> columns = {
        "frame.time", "ip.src_host", "ip.dst_host", "arp.opcode", "arp.hw.size", "arp.src.proto_ipv4",
        "arp.dst.proto_ipv4", "icmp.checksum", "icmp.seq_le", "icmp.transmit_timestamp", "icmp.unused",
        "tcp.srcport", "tcp.dstport", "tcp.seq", "tcp.ack", "tcp.ack_raw", "tcp.checksum", "tcp.flags",
        "tcp.flags.ack", "tcp.len", "tcp.options", "tcp.payload", "tcp.connection.syn",
        "tcp.connection.synack", "tcp.connection.fin", "tcp.connection.rst", "udp.port", "dns.qry.name",
        "dns.qry.name.len", "dns.qry.type", "dns.qry.qu", "http.request.method", "http.request.uri.query",
        "http.request.full_uri", "http.request.version", "http.content_length", "http.referer",
        "http.response", "http.file_data", "mqtt.hdrflags", "mqtt.msgtype", "mqtt.len", "mqtt.protoname",
        "mqtt.proto_len", "mqtt.ver", "mqtt.conflags", "mqtt.conflag.cleansess", "mqtt.topic",
        "mqtt.topic_len", "mqtt.msg", "mbtcp.trans_id", "mbtcp.len", "mbtcp.unit_id",
    };
    return columns;
}

FeatureTable extract_flows(std::span<const std::uint8_t> capture, double window_seconds,
                           const FeatureSchema &schema) {
    if (capture.size() < 24) throw MalformedCapture("capture shorter than the 24-byte global header");

    const std::uint32_t raw_magic =
        capture[0] | capture[1] << 8 | capture[2] << 16 | std::uint32_t(capture[3]) << 24;
    bool swap = false, nano = false;
    if (raw_magic == kMagicMicro || raw_magic == kMagicNano) {
        nano = raw_magic == kMagicNano;
    } else if (__builtin_bswap32(raw_magic) == kMagicMicro || __builtin_bswap32(raw_magic) == kMagicNano) {
        swap = true;
        nano = __builtin_bswap32(raw_magic) == kMagicNano;
    } else {
        throw MalformedCapture("bad magic number; only classic libpcap captures are supported");
    }
    const Reader reader(capture, swap);
    const auto link = reader.u32(20) & 0x0FFFFFFF;

    std::vector<Packet> packets;
    std::size_t off = 24;
    while (off < capture.size()) {
        if (capture.size() - off < 16) throw MalformedCapture("truncated record header at offset " + std::to_string(off));
        const auto sec = reader.u32(off);
        const auto frac = reader.u32(off + 4);
        const auto incl = reader.u32(off + 8);
        if (incl > kMaxRecord || capture.size() - off - 16 < incl) {
            throw MalformedCapture("truncated or oversized record at offset " + std::to_string(off));
        }
        Packet pkt;
        pkt.ts_ns = std::int64_t(sec) * 1000000000 + (nano ? std::int64_t(frac) : std::int64_t(frac) * 1000);
        pkt.bytes = capture.subspan(off + 16, incl);
        packets.push_back(pkt);
        off += 16 + incl;
    }

    const std::int64_t first_ts =
        packets.empty() ? 0
                        : std::min_element(packets.begin(), packets.end(), [](auto &a, auto &b) {
                              return a.ts_ns < b.ts_ns;
                          })->ts_ns;
    const auto window_ns = static_cast<std::int64_t>(window_seconds * 1e9);

    struct Member {
        const Packet *packet;
        Fields fields;
    };
    std::map<FlowKey, std::vector<Member>> flows;
    for (const auto &pkt : packets) {
        auto d = dissect(link, pkt.bytes);
        if (!d) continue;
        d->key.window = window_ns > 0 ? (pkt.ts_ns - first_ts) / window_ns : 0;
        d->fields["frame.time"] = timestamp_text(pkt.ts_ns);
        flows[d->key].push_back({&pkt, std::move(d->fields)});
    }

    auto canonical = [](const Member &a, const Member &b) {
        if (a.packet->ts_ns != b.packet->ts_ns) return a.packet->ts_ns < b.packet->ts_ns;
        return std::lexicographical_compare(a.packet->bytes.begin(), a.packet->bytes.end(),
                                            b.packet->bytes.begin(), b.packet->bytes.end());
    };

    struct FlowRow {
        std::int64_t first_ts;
        FlowKey key;
        Record row;
    };
    std::vector<FlowRow> out;
    out.reserve(flows.size());
    for (auto &[key, members] : flows) {
        std::sort(members.begin(), members.end(), canonical);
        Record row;
        row.reserve(schema.size());
        for (const auto &col : schema.columns()) {
            std::string value = "0";
            for (const auto &m : members) {
                auto it = m.fields.find(col.name);
                if (it != m.fields.end() && !it->second.empty() && it->second != "0") {
                    value = it->second;
                    break;
                }
            }
            row.push_back(std::move(value));
        }
        out.push_back({members.front().packet->ts_ns, key, std::move(row)});
    }
    std::stable_sort(out.begin(), out.end(), [](const FlowRow &a, const FlowRow &b) {
        if (a.first_ts != b.first_ts) return a.first_ts < b.first_ts;
        return a.key < b.key;
    });

    std::vector<Record> rows;
    rows.reserve(out.size());
    for (auto &f : out) rows.push_back(std::move(f.row));
    return FeatureTable(schema, std::move(rows));
}

FeatureTable extract_flows(const std::string &pcap_path, double window_seconds, const FeatureSchema &schema) {
    std::ifstream in(pcap_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + pcap_path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return extract_flows(std::span<const std::uint8_t>(bytes), window_seconds, schema);
}

}  // namespace trafficlm
