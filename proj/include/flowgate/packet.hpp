#pragma once

// Capture reading and packet cleaning/encoding into fixed 1600-value vectors.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowgate::packet {

inline constexpr std::size_t kPacketLength = 1600;
inline constexpr std::size_t kHeaderSlot = 60;
inline constexpr std::size_t kEthernetHeader = 14;
inline constexpr std::size_t kVlanTag = 4;

inline constexpr std::uint16_t kEtherTypeIPv4 = 0x0800;
inline constexpr std::uint16_t kEtherTypeArp = 0x0806;
inline constexpr std::uint16_t kEtherTypeVlan = 0x8100;

inline constexpr std::uint32_t kLinkTypeEthernet = 1;
inline constexpr std::uint32_t kLinkTypeRaw = 101;

struct RawPacket {
  std::size_t capture_index = 0;
  std::vector<std::uint8_t> link_bytes;
  std::uint32_t caplen = 0;
  std::uint32_t origlen = 0;
};

enum class Transport { Tcp, Udp, Other };

struct ParsedPacket {
  std::vector<std::uint8_t> ip_header;
  Transport transport = Transport::Other;
  std::vector<std::uint8_t> transport_header;
  std::vector<std::uint8_t> payload;
  std::array<std::uint8_t, 4> src_ip{};
  std::array<std::uint8_t, 4> dst_ip{};
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::optional<std::uint8_t> tcp_flags;

  bool operator==(const ParsedPacket&) const = default;
};

enum class Label { Normal, Anomaly };

struct SourceId {
  std::string file;
  std::size_t index = 0;

  bool operator==(const SourceId&) const = default;
  auto operator<=>(const SourceId&) const = default;
};

struct EncodedPacket {
  std::vector<double> values;  // kPacketLength entries, each a multiple of 1/255
  std::optional<Label> label;
  SourceId source;
};

enum class FilterReason { Kept, Dns, Arp, TcpControl, Unparseable };

struct FilterVerdict {
  bool keep = true;
  FilterReason reason = FilterReason::Kept;

  static FilterVerdict kept() { return {true, FilterReason::Kept}; }
  static FilterVerdict drop(FilterReason r) { return {false, r}; }
  bool operator==(const FilterVerdict&) const = default;
};

const char* to_string(FilterReason r);

// Legacy capture container (24-byte global header, 16-byte record headers),
// both byte orders, micro- and nanosecond magic variants.
class CaptureReader {
 public:
  explicit CaptureReader(const std::filesystem::path& path);
  /// Reads from an in-memory image of a capture file.
  explicit CaptureReader(std::vector<std::uint8_t> image);

  std::optional<RawPacket> next();

  std::uint32_t link_type() const { return link_type_; }
  bool nanosecond() const { return nanosecond_; }
  bool swapped() const { return swapped_; }

 private:
  void read_global_header();
  bool read_exact(std::uint8_t* dst, std::size_t n, bool allow_eof);

  std::ifstream file_;
  std::vector<std::uint8_t> image_;
  std::size_t image_pos_ = 0;
  bool from_image_ = false;
  bool swapped_ = false;
  bool nanosecond_ = false;
  std::uint32_t link_type_ = kLinkTypeEthernet;
  std::size_t next_index_ = 0;
};

std::vector<RawPacket> parse_capture(const std::filesystem::path& path);

/// Writes a little-endian microsecond capture; used by tests and the corpus tool.
void write_capture(const std::filesystem::path& path,
                   std::span<const std::vector<std::uint8_t>> frames,
                   std::uint32_t link_type = kLinkTypeEthernet);
std::vector<std::uint8_t> capture_image(std::span<const std::vector<std::uint8_t>> frames,
                                        std::uint32_t link_type = kLinkTypeEthernet);

struct StripResult {
  std::vector<std::uint8_t> network;
  std::optional<FilterVerdict> drop;
};

/// Removes the Ethernet II header (plus one 802.1Q tag); ARP frames are dropped.
StripResult strip_link_layer(const RawPacket& p);

ParsedPacket parse_network_transport(std::span<const std::uint8_t> bytes);

FilterVerdict filter_packet(const ParsedPacket& p);

/// Zeroes both IPv4 addresses and the header checksum.
ParsedPacket anonymize(ParsedPacket p);

/// ip header | transport header, each zero-padded to 60 bytes | payload,
/// truncated or zero-padded to 1600 bytes and scaled by 1/255.
EncodedPacket canonicalize(const ParsedPacket& p);

std::array<std::uint8_t, kPacketLength> canonical_bytes(const ParsedPacket& p);

struct PreprocessStats {
  std::size_t total = 0;
  std::size_t kept = 0;
  std::size_t dns = 0;
  std::size_t arp = 0;
  std::size_t tcp_control = 0;
  std::size_t unparseable = 0;

  void count(FilterReason r);
  PreprocessStats& operator+=(const PreprocessStats& o);
};

/// Full cleaning chain for one link-layer frame. Returns nullopt when dropped.
std::optional<EncodedPacket> encode_frame(const RawPacket& raw, std::uint32_t link_type,
                                          std::optional<Label> label, const std::string& file,
                                          PreprocessStats* stats = nullptr);

/// Cleans and encodes every packet of one capture file, in file order.
std::vector<EncodedPacket> preprocess_capture(const std::filesystem::path& path,
                                              std::optional<Label> label,
                                              PreprocessStats* stats = nullptr);

/// A file, or every capture file (*.pcap, *.cap, *.dmp) under a directory,
/// ordered by path then capture index.
std::vector<EncodedPacket> preprocess_path(const std::filesystem::path& path,
                                           std::optional<Label> label,
                                           PreprocessStats* stats = nullptr);

}  // namespace flowgate::packet
