#pragma once

// Desk-scale synthetic traffic. Frames are built at the link layer and run
// through the real cleaning and encoding chain.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "flowgate/packet.hpp"

namespace flowgate::corpus {

struct FrameSpec {
  std::array<std::uint8_t, 4> src_ip{10, 0, 0, 1};
  std::array<std::uint8_t, 4> dst_ip{10, 0, 0, 2};
  std::uint8_t protocol = 6;  // 6 TCP, 17 UDP
  std::uint16_t src_port = 40000;
  std::uint16_t dst_port = 80;
  std::uint8_t ttl = 64;
  std::uint16_t ip_id = 0;
  bool dont_fragment = true;
  std::uint8_t tcp_flags = 0x18;  // PSH|ACK
  std::uint16_t window = 65535;
  std::vector<std::uint8_t> ip_options;   // padded to a multiple of 4
  std::vector<std::uint8_t> tcp_options;  // padded to a multiple of 4
  std::vector<std::uint8_t> payload;
  std::optional<std::uint16_t> vlan;
  std::uint16_t ether_type = 0x0800;
};

/// Ethernet II frame (optionally 802.1Q tagged) carrying IPv4 + TCP/UDP.
std::vector<std::uint8_t> build_frame(const FrameSpec& spec);

/// One synthetic frame; anomalous frames use disjoint ports, shifted header
/// fields and mostly high-entropy payloads, with some overlap in each.
std::vector<std::uint8_t> synthetic_frame(std::uint64_t seed, std::size_t index, bool anomalous);

struct Corpus {
  std::vector<packet::EncodedPacket> normal;
  std::vector<packet::EncodedPacket> anomaly;
};

Corpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_normal, std::size_t n_anomaly);

/// Mean of all encoded values across a set of packets.
double mean_value(const std::vector<packet::EncodedPacket>& packets);

}  // namespace flowgate::corpus
