#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trafficlm/ingest.hpp"

namespace trafficlm {

/// Columns extract_flows knows how to fill. Every other schema column is "0".
///
/// Frame: frame.time. IP: ip.src_host, ip.dst_host. ARP: arp.opcode,
/// arp.hw.size, arp.src.proto_ipv4, arp.dst.proto_ipv4. ICMP: icmp.checksum,
/// icmp.seq_le, icmp.transmit_timestamp, icmp.unused. TCP: tcp.srcport,
/// tcp.dstport, tcp.seq, tcp.ack, tcp.ack_raw, tcp.checksum, tcp.flags,
/// tcp.flags.ack, tcp.len, tcp.options, tcp.payload, tcp.connection.{syn,
/// synack,fin,rst}. UDP: udp.port. DNS: dns.qry.name, dns.qry.name.len,
/// dns.qry.type, dns.qry.qu. HTTP: http.request.method, http.request.uri.query,
/// http.request.full_uri, http.request.version, http.content_length,
/// http.referer, http.response, http.file_data. MQTT: mqtt.hdrflags,
/// mqtt.msgtype, mqtt.len, mqtt.protoname, mqtt.proto_len, mqtt.ver,
/// mqtt.conflags, mqtt.conflag.cleansess, mqtt.topic, mqtt.topic_len, mqtt.msg.
/// Modbus/TCP: mbtcp.trans_id, mbtcp.len, mbtcp.unit_id.
const std::vector<std::string> &supported_flow_columns();

/// Groups the packets of a classic libpcap capture into flows and emits one
/// row per flow.
///
/// A flow is the directional 5-tuple (src IP, dst IP, src port, dst port,
/// protocol) within a time window; `window_seconds` <= 0 means the whole
/// capture is one window. ARP packets are keyed by sender/target protocol
/// address. Within a flow, packets are put in canonical order (timestamp, then
/// raw bytes) and each column takes the first non-"0" value in that order, so
/// the row does not depend on capture order of same-timestamp packets. Rows
/// are ordered by first-packet timestamp. IPv6 and non-IP frames are skipped.
///
/// Supported link types: Ethernet (with 802.1Q tags), raw IPv4, Linux cooked
/// capture, BSD loopback. Both byte orders, micro- and nanosecond variants.
FeatureTable extract_flows(const std::string &pcap_path, double window_seconds, const FeatureSchema &schema);
FeatureTable extract_flows(std::span<const std::uint8_t> capture, double window_seconds,
                           const FeatureSchema &schema);

}  // namespace trafficlm
