#include <doctest.h>

#include <cmath>
#include <map>
#include <tuple>

#include <json.hpp>

#include "support.hpp"
#include "trafficlm/error.hpp"
#include "trafficlm/pcap.hpp"

using namespace trafficlm;
using Bytes = std::vector<std::uint8_t>;

namespace {

FeatureSchema flow_schema() {
    // No exclusions: the tests look at host and time columns too.
    return schema_from_names(supported_flow_columns()).with_exclusions({});
}

std::string cell(const FeatureTable &t, std::size_t row, const std::string &column) {
    return t.rows().at(row).at(*t.schema().index_of(column));
}

void put16(Bytes &b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v));
}

void put32(Bytes &b, std::uint32_t v) {
    put16(b, static_cast<std::uint16_t>(v >> 16));
    put16(b, static_cast<std::uint16_t>(v));
}

/// Ethernet + IPv4 + TCP frame. Checksums are left zero; the extractor reports
/// them verbatim and never validates them.
Bytes tcp_frame(std::array<std::uint8_t, 4> src, std::array<std::uint8_t, 4> dst, std::uint16_t sport,
                std::uint16_t dport, std::uint8_t flags, std::uint32_t seq, const std::string &payload = {}) {
    Bytes f(12, 0x02);
    put16(f, 0x0800);
    const auto total = static_cast<std::uint16_t>(20 + 20 + payload.size());
    f.push_back(0x45);
    f.push_back(0);
    put16(f, total);
    put32(f, 0);
    f.push_back(64);
    f.push_back(6);
    put16(f, 0);
    f.insert(f.end(), src.begin(), src.end());
    f.insert(f.end(), dst.begin(), dst.end());
    put16(f, sport);
    put16(f, dport);
    put32(f, seq);
    put32(f, 0);
    f.push_back(5 << 4);
    f.push_back(flags);
    put16(f, 8192);
    put16(f, 0);
    put16(f, 0);
    f.insert(f.end(), payload.begin(), payload.end());
    return f;
}

struct Frame {
    std::uint32_t sec;
    std::uint32_t frac;
    Bytes bytes;
};

/// Classic libpcap file, Ethernet link type, in either byte order.
Bytes capture(const std::vector<Frame> &frames, bool big_endian = false, bool nano = false) {
    Bytes out;
    auto u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            const int shift = big_endian ? 24 - 8 * i : 8 * i;
            out.push_back(static_cast<std::uint8_t>(v >> shift));
        }
    };
    auto u16 = [&](std::uint16_t v) {
        if (big_endian) {
            out.push_back(static_cast<std::uint8_t>(v >> 8));
            out.push_back(static_cast<std::uint8_t>(v));
        } else {
            out.push_back(static_cast<std::uint8_t>(v));
            out.push_back(static_cast<std::uint8_t>(v >> 8));
        }
    };
    u32(nano ? 0xA1B23C4D : 0xA1B2C3D4);
    u16(2);
    u16(4);
    u32(0);
    u32(0);
    u32(65535);
    u32(1);
    for (const auto &f : frames) {
        u32(f.sec);
        u32(f.frac);
        u32(static_cast<std::uint32_t>(f.bytes.size()));
        u32(static_cast<std::uint32_t>(f.bytes.size()));
        out.insert(out.end(), f.bytes.begin(), f.bytes.end());
    }
    return out;
}

}  // namespace

TEST_CASE("flows from the scapy fixture match scapy's own dissection") {
    auto expected = nlohmann::json::parse(test::read_file(test::data_path("flows_expected.json")));
    auto schema = flow_schema();
    auto table = extract_flows(test::data_path("flows.pcap"), 1.0, schema);

    // Independent grouping: endpoints plus whole-second window from the first packet.
    const double t0 = expected.front()["time"].get<double>();
    std::map<std::string, std::pair<double, std::map<std::string, std::string>>> flows;
    std::vector<std::string> order;
    for (const auto &pkt : expected) {
        const auto &f = pkt["fields"];
        auto get = [&](const char *k) { return f.contains(k) ? f[k].get<std::string>() : std::string("-"); };
        const auto window = static_cast<long>(std::floor(pkt["time"].get<double>() - t0));
        const auto key = get("ip.src_host") + get("arp.src.proto_ipv4") + "|" + get("ip.dst_host") +
                         get("arp.dst.proto_ipv4") + "|" + get("tcp.srcport") + "|" + get("tcp.dstport") + "|" +
                         get("udp.port") + "|" + std::to_string(window);
        auto [it, fresh] = flows.try_emplace(key, pkt["time"].get<double>(), std::map<std::string, std::string>{});
        if (fresh) order.push_back(key);
        // Each column keeps the first non-"0" value in time order.
        for (auto &[name, value] : f.items()) {
            auto &slot = it->second.second[name];
            if (slot.empty() || slot == "0") slot = value.get<std::string>();
        }
    }

    REQUIRE(table.num_rows() == order.size());
    REQUIRE(table.num_rows() == 7);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const auto &[time, fields] = flows[order[r]];
        CAPTURE(r);
        for (const auto &[name, value] : fields) {
            CAPTURE(name);
            CHECK(cell(table, r, name) == value);
        }
    }

    // The HTTP request shares a flow with the SYN; the FIN three seconds later does not.
    CHECK(cell(table, 0, "tcp.flags") == "2");
    CHECK(cell(table, 0, "http.request.method") == "GET");
    CHECK(cell(table, 6, "tcp.flags") == "1");
    CHECK(cell(table, 6, "http.request.method") == "0");

    // One window over the whole capture merges them.
    auto whole = extract_flows(test::data_path("flows.pcap"), 0.0, schema);
    CHECK(whole.num_rows() == 6);
}

TEST_CASE("single SYN gives one row with empty HTTP columns") {
    auto schema = flow_schema();
    auto cap = capture({{1000, 0, tcp_frame({10, 0, 0, 1}, {10, 0, 0, 2}, 5555, 443, 0x02, 1)}});
    auto t = extract_flows(std::span<const std::uint8_t>(cap), 1.0, schema);
    REQUIRE(t.num_rows() == 1);
    CHECK(cell(t, 0, "tcp.dstport") == "443");
    CHECK(cell(t, 0, "tcp.srcport") == "5555");
    CHECK(cell(t, 0, "tcp.connection.syn") == "1");
    for (const auto &name : schema.names()) {
        if (name.starts_with("http.")) CHECK(cell(t, 0, name) == "0");
    }
}

TEST_CASE("interleaved flows come out in first-packet order") {
    auto schema = flow_schema();
    auto a = [](std::uint32_t seq) { return tcp_frame({10, 0, 0, 1}, {10, 0, 0, 2}, 1000, 80, 0x10, seq); };
    auto b = [](std::uint32_t seq) { return tcp_frame({10, 0, 0, 3}, {10, 0, 0, 4}, 2000, 443, 0x10, seq); };
    auto cap = capture({{5, 300, b(1)}, {5, 100, a(7)}, {5, 400, a(8)}, {5, 200, b(2)}});
    auto t = extract_flows(std::span<const std::uint8_t>(cap), 0.0, schema);
    REQUIRE(t.num_rows() == 2);
    CHECK(cell(t, 0, "tcp.dstport") == "80");
    CHECK(cell(t, 0, "tcp.seq") == "7");
    CHECK(cell(t, 1, "tcp.dstport") == "443");
    CHECK(cell(t, 1, "tcp.seq") == "2");
    CHECK(cell(t, 0, "frame.time") == "5.000100000");
}

TEST_CASE("reordering same-timestamp packets within a flow gives the same row") {
    auto schema = flow_schema();
    auto p1 = tcp_frame({10, 0, 0, 1}, {10, 0, 0, 2}, 1000, 80, 0x18, 11, "GET /a HTTP/1.1\r\n\r\n");
    auto p2 = tcp_frame({10, 0, 0, 1}, {10, 0, 0, 2}, 1000, 80, 0x18, 22, "POST /b HTTP/1.0\r\n\r\n");
    auto p3 = tcp_frame({10, 0, 0, 1}, {10, 0, 0, 2}, 1000, 80, 0x02, 33);
    auto forward = capture({{7, 0, p1}, {7, 0, p2}, {7, 0, p3}});
    auto backward = capture({{7, 0, p3}, {7, 0, p2}, {7, 0, p1}});
    auto x = extract_flows(std::span<const std::uint8_t>(forward), 1.0, schema);
    auto y = extract_flows(std::span<const std::uint8_t>(backward), 1.0, schema);
    REQUIRE(x.num_rows() == 1);
    CHECK(x == y);
}

TEST_CASE("byte order and timestamp resolution variants agree") {
    auto schema = flow_schema();
    auto frame = tcp_frame({192, 168, 1, 1}, {192, 168, 1, 2}, 1234, 8080, 0x02, 99);
    auto le = capture({{42, 500000, frame}});
    auto be = capture({{42, 500000, frame}}, true);
    auto nano = capture({{42, 500000000, frame}}, false, true);
    auto a = extract_flows(std::span<const std::uint8_t>(le), 1.0, schema);
    auto b = extract_flows(std::span<const std::uint8_t>(be), 1.0, schema);
    auto c = extract_flows(std::span<const std::uint8_t>(nano), 1.0, schema);
    CHECK(a == b);
    CHECK(a == c);
    CHECK(cell(a, 0, "frame.time") == "42.500000000");
    CHECK(cell(a, 0, "ip.src_host") == "192.168.1.1");
}

TEST_CASE("empty capture gives an empty table") {
    auto cap = capture({});
    auto t = extract_flows(std::span<const std::uint8_t>(cap), 1.0, flow_schema());
    CHECK(t.num_rows() == 0);
}

TEST_CASE("malformed captures are rejected") {
    auto schema = flow_schema();
    auto good = capture({{1, 0, tcp_frame({1, 1, 1, 1}, {2, 2, 2, 2}, 1, 2, 0x02, 0)}});

    Bytes short_header(good.begin(), good.begin() + 10);
    CHECK_THROWS_AS(extract_flows(std::span<const std::uint8_t>(short_header), 1.0, schema), MalformedCapture);

    Bytes bad_magic = good;
    bad_magic[0] ^= 0xFF;
    CHECK_THROWS_AS(extract_flows(std::span<const std::uint8_t>(bad_magic), 1.0, schema), MalformedCapture);

    Bytes truncated(good.begin(), good.end() - 5);
    CHECK_THROWS_AS(extract_flows(std::span<const std::uint8_t>(truncated), 1.0, schema), MalformedCapture);

    Bytes partial_record = good;
    partial_record.insert(partial_record.end(), {1, 2, 3});
    CHECK_THROWS_AS(extract_flows(std::span<const std::uint8_t>(partial_record), 1.0, schema), MalformedCapture);

    CHECK_THROWS_AS(extract_flows("/nonexistent/capture.pcap", 1.0, schema), IoError);
}

TEST_CASE("extraction fills only schema columns and defaults the rest to 0") {
    auto schema = schema_from_names({"tcp.dstport", "mqtt.topic", "not.a.field"});
    auto cap = capture({{1, 0, tcp_frame({1, 1, 1, 1}, {2, 2, 2, 2}, 10, 20, 0x02, 0)}});
    auto t = extract_flows(std::span<const std::uint8_t>(cap), 1.0, schema);
    CHECK(t.rows()[0] == Record{"20", "0", "0"});
}
