#include "flowgate/packet.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "flowgate/error.hpp"

namespace flowgate::packet {

namespace {

constexpr std::uint32_t kMagicMicro = 0xa1b2c3d4;
constexpr std::uint32_t kMagicMicroSwapped = 0xd4c3b2a1;
constexpr std::uint32_t kMagicNano = 0xa1b23c4d;
constexpr std::uint32_t kMagicNanoSwapped = 0x4d3cb2a1;

constexpr std::size_t kGlobalHeader = 24;
constexpr std::size_t kRecordHeader = 16;

constexpr std::uint8_t kProtoTcp = 6;
constexpr std::uint8_t kProtoUdp = 17;
constexpr std::uint16_t kDnsPort = 53;

std::uint32_t load_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00) | ((v << 8) & 0xff0000) | (v << 24);
}

std::uint16_t load_u16_be(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] << 8 | p[1]);
}

void store_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void store_u16_le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool is_capture_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pcap" || ext == ".cap" || ext == ".dmp";
}

}  // namespace

const char* to_string(FilterReason r) {
  switch (r) {
    case FilterReason::Kept: return "KEPT";
    case FilterReason::Dns: return "DNS";
    case FilterReason::Arp: return "ARP";
    case FilterReason::TcpControl: return "TCP_CONTROL";
    case FilterReason::Unparseable: return "UNPARSEABLE";
  }
  return "UNPARSEABLE";
}

// ---------------------------------------------------------------------------
// Capture container

CaptureReader::CaptureReader(const std::filesystem::path& path)
    : file_(path, std::ios::binary) {
  if (!file_) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  read_global_header();
}

CaptureReader::CaptureReader(std::vector<std::uint8_t> image)
    : image_(std::move(image)), from_image_(true) {
  read_global_header();
}

bool CaptureReader::read_exact(std::uint8_t* dst, std::size_t n, bool allow_eof) {
  std::size_t got = 0;
  if (from_image_) {
    got = std::min(n, image_.size() - image_pos_);
    std::memcpy(dst, image_.data() + image_pos_, got);
    image_pos_ += got;
  } else {
    file_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    got = static_cast<std::size_t>(file_.gcount());
  }
  if (got == n) return true;
  if (got == 0 && allow_eof) return false;
  throw Error(ErrorCode::TruncatedRecord, "expected " + std::to_string(n) + " bytes, found " +
                                              std::to_string(got));
}

void CaptureReader::read_global_header() {
  std::array<std::uint8_t, kGlobalHeader> hdr{};
  std::size_t got = 0;
  if (from_image_) {
    got = std::min(hdr.size(), image_.size());
    std::memcpy(hdr.data(), image_.data(), got);
    image_pos_ = got;
  } else {
    file_.read(reinterpret_cast<char*>(hdr.data()), hdr.size());
    got = static_cast<std::size_t>(file_.gcount());
  }
  if (got < 4) throw Error(ErrorCode::UnrecognizedMagic, "file shorter than a magic number");
  const std::uint32_t magic = load_u32_le(hdr.data());
  switch (magic) {
    case kMagicMicro: break;
    case kMagicNano: nanosecond_ = true; break;
    case kMagicMicroSwapped: swapped_ = true; break;
    case kMagicNanoSwapped: swapped_ = true; nanosecond_ = true; break;
    default: throw Error(ErrorCode::UnrecognizedMagic, "magic 0x" + [&] {
        char buf[9];
        std::snprintf(buf, sizeof buf, "%08x", magic);
        return std::string(buf);
      }());
  }
  if (got < kGlobalHeader) throw Error(ErrorCode::TruncatedRecord, "global header truncated");
  std::uint32_t lt = load_u32_le(hdr.data() + 20);
  link_type_ = swapped_ ? byteswap32(lt) : lt;
}

std::optional<RawPacket> CaptureReader::next() {
  std::array<std::uint8_t, kRecordHeader> rec{};
  if (!read_exact(rec.data(), rec.size(), true)) return std::nullopt;
  auto field = [&](std::size_t off) {
    const std::uint32_t v = load_u32_le(rec.data() + off);
    return swapped_ ? byteswap32(v) : v;
  };
  RawPacket p;
  p.capture_index = next_index_++;
  p.caplen = field(8);
  p.origlen = field(12);
  if (p.caplen > p.origlen) p.origlen = p.caplen;
  p.link_bytes.resize(p.caplen);
  if (p.caplen > 0 && !read_exact(p.link_bytes.data(), p.caplen, false)) {
    throw Error(ErrorCode::TruncatedRecord, "record body missing");
  }
  return p;
}

std::vector<RawPacket> parse_capture(const std::filesystem::path& path) {
  CaptureReader reader(path);
  std::vector<RawPacket> out;
  while (auto p = reader.next()) out.push_back(std::move(*p));
  return out;
}

std::vector<std::uint8_t> capture_image(std::span<const std::vector<std::uint8_t>> frames,
                                        std::uint32_t link_type) {
  std::vector<std::uint8_t> out;
  store_u32_le(out, kMagicMicro);
  store_u16_le(out, 2);
  store_u16_le(out, 4);
  store_u32_le(out, 0);       // thiszone
  store_u32_le(out, 0);       // sigfigs
  store_u32_le(out, 65535);   // snaplen
  store_u32_le(out, link_type);
  std::uint32_t ts = 0;
  for (const auto& f : frames) {
    store_u32_le(out, ts++);
    store_u32_le(out, 0);
    store_u32_le(out, static_cast<std::uint32_t>(f.size()));
    store_u32_le(out, static_cast<std::uint32_t>(f.size()));
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

void write_capture(const std::filesystem::path& path,
                   std::span<const std::vector<std::uint8_t>> frames, std::uint32_t link_type) {
  const auto image = capture_image(frames, link_type);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Cleaning

StripResult strip_link_layer(const RawPacket& p) {
  const auto& b = p.link_bytes;
  if (b.size() < kEthernetHeader) {
    throw Error(ErrorCode::TooShort,
                "frame of " + std::to_string(b.size()) + " bytes has no Ethernet header");
  }
  std::size_t offset = kEthernetHeader;
  std::uint16_t ether_type = load_u16_be(b.data() + 12);
  if (ether_type == kEtherTypeVlan) {
    if (b.size() < kEthernetHeader + kVlanTag) {
      throw Error(ErrorCode::TooShort, "VLAN tag truncated");
    }
    ether_type = load_u16_be(b.data() + 16);
    offset += kVlanTag;
  }
  if (ether_type == kEtherTypeArp) return {{}, FilterVerdict::drop(FilterReason::Arp)};
  return {std::vector<std::uint8_t>(b.begin() + static_cast<std::ptrdiff_t>(offset), b.end()),
          std::nullopt};
}

ParsedPacket parse_network_transport(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || (bytes[0] >> 4) != 4) {
    throw Error(ErrorCode::NotIPv4, bytes.empty() ? "empty network layer"
                                                  : "version nibble " + std::to_string(bytes[0] >> 4));
  }
  if (bytes.size() < 20) throw Error(ErrorCode::HeaderTruncated, "IPv4 header shorter than 20 bytes");
  const std::size_t ihl = bytes[0] & 0x0f;
  if (ihl < 5) throw Error(ErrorCode::BadIHL, "IHL " + std::to_string(ihl));
  const std::size_t ip_len = ihl * 4;
  if (bytes.size() < ip_len) throw Error(ErrorCode::HeaderTruncated, "IPv4 options truncated");

  // Respect the IP total length so link-layer padding is not read as payload.
  std::size_t end = bytes.size();
  const std::size_t total_length = load_u16_be(bytes.data() + 2);
  if (total_length >= ip_len && total_length < end) end = total_length;

  ParsedPacket p;
  p.ip_header.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(ip_len));
  std::copy_n(bytes.begin() + 12, 4, p.src_ip.begin());
  std::copy_n(bytes.begin() + 16, 4, p.dst_ip.begin());

  const auto rest = bytes.subspan(ip_len, end - ip_len);
  const std::uint8_t proto = bytes[9];
  std::size_t th_len = 0;
  if (proto == kProtoTcp) {
    p.transport = Transport::Tcp;
    if (rest.size() < 20) throw Error(ErrorCode::HeaderTruncated, "TCP header shorter than 20 bytes");
    const std::size_t data_offset = rest[12] >> 4;
    if (data_offset < 5) throw Error(ErrorCode::HeaderTruncated, "TCP data offset " + std::to_string(data_offset));
    th_len = data_offset * 4;
    if (rest.size() < th_len) throw Error(ErrorCode::HeaderTruncated, "TCP options truncated");
    p.tcp_flags = rest[13];
  } else if (proto == kProtoUdp) {
    p.transport = Transport::Udp;
    if (rest.size() < 8) throw Error(ErrorCode::HeaderTruncated, "UDP header shorter than 8 bytes");
    th_len = 8;
  } else {
    p.transport = Transport::Other;
  }
  if (p.transport != Transport::Other) {
    p.src_port = load_u16_be(rest.data());
    p.dst_port = load_u16_be(rest.data() + 2);
  }
  p.transport_header.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(th_len));
  p.payload.assign(rest.begin() + static_cast<std::ptrdiff_t>(th_len), rest.end());
  return p;
}

FilterVerdict filter_packet(const ParsedPacket& p) {
  if (p.transport != Transport::Other && (p.src_port == kDnsPort || p.dst_port == kDnsPort)) {
    return FilterVerdict::drop(FilterReason::Dns);
  }
  if (p.transport == Transport::Other) return FilterVerdict::drop(FilterReason::Unparseable);
  if (p.transport == Transport::Tcp && p.payload.empty()) {
    return FilterVerdict::drop(FilterReason::TcpControl);
  }
  return FilterVerdict::kept();
}

ParsedPacket anonymize(ParsedPacket p) {
  std::fill(p.ip_header.begin() + 10, p.ip_header.begin() + 12, 0);  // checksum
  std::fill(p.ip_header.begin() + 12, p.ip_header.begin() + 20, 0);  // src, dst
  p.src_ip.fill(0);
  p.dst_ip.fill(0);
  return p;
}

std::array<std::uint8_t, kPacketLength> canonical_bytes(const ParsedPacket& p) {
  std::array<std::uint8_t, kPacketLength> out{};
  std::copy_n(p.ip_header.begin(), std::min(p.ip_header.size(), kHeaderSlot), out.begin());
  std::copy_n(p.transport_header.begin(), std::min(p.transport_header.size(), kHeaderSlot),
              out.begin() + kHeaderSlot);
  const std::size_t room = kPacketLength - 2 * kHeaderSlot;
  std::copy_n(p.payload.begin(), std::min(p.payload.size(), room), out.begin() + 2 * kHeaderSlot);
  return out;
}

EncodedPacket canonicalize(const ParsedPacket& p) {
  const auto bytes = canonical_bytes(p);
  EncodedPacket e;
  e.values.resize(kPacketLength);
  for (std::size_t i = 0; i < kPacketLength; ++i) e.values[i] = bytes[i] / 255.0;
  return e;
}

// ---------------------------------------------------------------------------
// Drivers

void PreprocessStats::count(FilterReason r) {
  ++total;
  switch (r) {
    case FilterReason::Kept: ++kept; break;
    case FilterReason::Dns: ++dns; break;
    case FilterReason::Arp: ++arp; break;
    case FilterReason::TcpControl: ++tcp_control; break;
    case FilterReason::Unparseable: ++unparseable; break;
  }
}

PreprocessStats& PreprocessStats::operator+=(const PreprocessStats& o) {
  total += o.total;
  kept += o.kept;
  dns += o.dns;
  arp += o.arp;
  tcp_control += o.tcp_control;
  unparseable += o.unparseable;
  return *this;
}

std::optional<EncodedPacket> encode_frame(const RawPacket& raw, std::uint32_t link_type,
                                          std::optional<Label> label, const std::string& file,
                                          PreprocessStats* stats) {
  auto tally = [&](FilterReason r) {
    if (stats) stats->count(r);
  };
  std::vector<std::uint8_t> network;
  try {
    if (link_type == kLinkTypeRaw) {
      network = raw.link_bytes;
    } else {
      auto stripped = strip_link_layer(raw);
      if (stripped.drop) {
        tally(stripped.drop->reason);
        return std::nullopt;
      }
      network = std::move(stripped.network);
    }
    const ParsedPacket parsed = parse_network_transport(network);
    const FilterVerdict verdict = filter_packet(parsed);
    tally(verdict.reason);
    if (!verdict.keep) return std::nullopt;
    EncodedPacket e = canonicalize(anonymize(parsed));
    e.label = label;
    e.source = {file, raw.capture_index};
    return e;
  } catch (const Error& err) {
    switch (err.code()) {
      case ErrorCode::TooShort:
      case ErrorCode::NotIPv4:
      case ErrorCode::HeaderTruncated:
      case ErrorCode::BadIHL:
        tally(FilterReason::Unparseable);
        return std::nullopt;
      default: throw;
    }
  }
}

std::vector<EncodedPacket> preprocess_capture(const std::filesystem::path& path,
                                              std::optional<Label> label,
                                              PreprocessStats* stats) {
  CaptureReader reader(path);
  std::vector<EncodedPacket> out;
  const std::string file = path.string();
  while (auto raw = reader.next()) {
    if (auto e = encode_frame(*raw, reader.link_type(), label, file, stats)) {
      out.push_back(std::move(*e));
    }
  }
  return out;
}

std::vector<EncodedPacket> preprocess_path(const std::filesystem::path& path,
                                           std::optional<Label> label,
                                           PreprocessStats* stats) {
  if (!std::filesystem::is_directory(path)) return preprocess_capture(path, label, stats);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(path)) {
    if (entry.is_regular_file() && is_capture_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EncodedPacket> out;
  for (const auto& f : files) {
    auto part = preprocess_capture(f, label, stats);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

}  // namespace flowgate::packet
