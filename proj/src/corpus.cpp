#include "flowgate/corpus.hpp"

#include <algorithm>
#include <string>
#include <string_view>

#include "flowgate/error.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::corpus {

namespace {

constexpr std::array<std::string_view, 24> kWords = {
    "index", "images", "api",     "v1",      "users",   "login",  "static", "css",
    "news",  "search", "account", "profile", "session", "update", "home",   "assets",
    "cart",  "items",  "json",    "query",   "token",   "page",   "report", "data"};

constexpr std::array<std::uint16_t, 3> kNormalTcpPorts = {80, 8080, 8000};
constexpr std::array<std::uint16_t, 5> kAnomalyTcpPorts = {4444, 6667, 1337, 31337, 8888};

void put16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v >> 8);
  b[at + 1] = static_cast<std::uint8_t>(v);
}

std::uint16_t ip_checksum(const std::vector<std::uint8_t>& b, std::size_t start, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) sum += static_cast<std::uint32_t>(b[start + i] << 8 | b[start + i + 1]);
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

std::vector<std::uint8_t> padded(std::vector<std::uint8_t> v) {
  while (v.size() % 4 != 0) v.push_back(0);  // EOL padding
  return v;
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t n) {
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(uniform(rng, 0, 255));
  return out;
}

std::string words(Rng& rng, std::size_t n, char sep) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += sep;
    s += kWords[uniform(rng, 0, kWords.size() - 1)];
  }
  return s;
}

std::vector<std::uint8_t> text_payload(Rng& rng, std::size_t target) {
  std::string s;
  if (uniform(rng, 0, 1) == 0) {
    s = "GET /" + words(rng, uniform(rng, 1, 4), '/') + " HTTP/1.1\r\nHost: www." +
        words(rng, 1, '.') + ".com\r\nUser-Agent: Mozilla/5.0\r\nAccept: */*\r\n";
  } else {
    s = "HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: " +
        std::to_string(target) + "\r\n\r\n<html><body>";
  }
  while (s.size() < target) s += words(rng, 1, ' ') + (uniform(rng, 0, 7) == 0 ? "\r\n" : " ");
  s.resize(target);
  return {s.begin(), s.end()};
}

std::vector<std::uint8_t> tls_record(Rng& rng, std::size_t n) {
  std::vector<std::uint8_t> out{0x17, 0x03, 0x03, static_cast<std::uint8_t>(n >> 8),
                                static_cast<std::uint8_t>(n)};
  auto body = random_bytes(rng, n);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::vector<std::uint8_t> timestamp_option(Rng& rng) {
  std::vector<std::uint8_t> o{1, 1, 8, 10};
  for (int i = 0; i < 8; ++i) o.push_back(static_cast<std::uint8_t>(uniform(rng, 0, 255)));
  return o;
}

FrameSpec normal_spec(Rng& rng) {
  FrameSpec s;
  s.ttl = 64;
  s.ip_id = static_cast<std::uint16_t>(uniform(rng, 0, 65535));
  s.src_port = static_cast<std::uint16_t>(uniform(rng, 49152, 65535));
  s.window = static_cast<std::uint16_t>(uniform(rng, 500, 2000));
  if (uniform(rng, 0, 9) < 7) s.tcp_options = timestamp_option(rng);
  s.dst_port = kNormalTcpPorts[uniform(rng, 0, kNormalTcpPorts.size() - 1)];
  s.payload = text_payload(rng, uniform(rng, 120, 1000));
  if (uniform(rng, 0, 1)) std::swap(s.src_port, s.dst_port);
  return s;
}

FrameSpec anomaly_spec(Rng& rng) {
  FrameSpec s;
  s.ttl = static_cast<std::uint8_t>(uniform(rng, 0, 1) ? 128 : uniform(rng, 40, 64));
  s.ip_id = static_cast<std::uint16_t>(uniform(rng, 0, 65535));
  s.dont_fragment = uniform(rng, 0, 1) == 0;
  s.src_port = static_cast<std::uint16_t>(uniform(rng, 1024, 65535));
  s.window = static_cast<std::uint16_t>(uniform(rng, 0, 65535));
  if (uniform(rng, 0, 9) < 3) s.tcp_options = timestamp_option(rng);
  const std::size_t kind = uniform(rng, 0, 99);
  if (kind < 45) {
    s.dst_port = kAnomalyTcpPorts[uniform(rng, 0, kAnomalyTcpPorts.size() - 1)];
    s.payload = random_bytes(rng, uniform(rng, 700, 1460));
  } else if (kind < 65) {
    s.dst_port = 443;
    s.payload = tls_record(rng, uniform(rng, 900, 1400));
  } else if (kind < 75) {
    // Text-like command channel: overlaps the normal byte range.
    s.dst_port = 6667;
    std::string irc = "PRIVMSG #" + words(rng, 1, '-') + " :";
    auto text = text_payload(rng, uniform(rng, 200, 700));
    s.payload.assign(irc.begin(), irc.end());
    s.payload.insert(s.payload.end(), text.begin(), text.end());
  } else if (kind < 85) {
    // Base64 exfiltration over a normal web port.
    s.dst_port = kNormalTcpPorts[uniform(rng, 0, kNormalTcpPorts.size() - 1)];
    std::string post = "POST /" + words(rng, 2, '/') + " HTTP/1.1\r\nContent-Type: text/plain\r\n\r\n";
    s.payload.assign(post.begin(), post.end());
    constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    const std::size_t n = uniform(rng, 600, 1300);
    for (std::size_t i = 0; i < n; ++i) s.payload.push_back(static_cast<std::uint8_t>(kB64[uniform(rng, 0, 63)]));
  } else {
    s.protocol = 17;
    s.dst_port = uniform(rng, 0, 1) ? 1900 : 123;
    s.payload = random_bytes(rng, uniform(rng, 500, 1400));
  }
  return s;
}

}  // namespace

std::vector<std::uint8_t> build_frame(const FrameSpec& spec) {
  const auto ip_opts = padded(spec.ip_options);
  const bool tcp = spec.protocol == 6;
  const auto tcp_opts = padded(spec.tcp_options);
  const std::size_t ip_len = 20 + ip_opts.size();
  const std::size_t th_len = tcp ? 20 + tcp_opts.size() : 8;
  const std::size_t total = ip_len + th_len + spec.payload.size();

  std::vector<std::uint8_t> f(12, 0);
  const std::array<std::uint8_t, 12> macs = {0x00, 0x1b, 0x21, 0x3a, 0x4f, 0x01,
                                             0x00, 0x0c, 0x29, 0x5e, 0x6d, 0x02};
  std::copy(macs.begin(), macs.end(), f.begin());
  if (spec.vlan) {
    f.push_back(0x81);
    f.push_back(0x00);
    f.push_back(static_cast<std::uint8_t>(*spec.vlan >> 8));
    f.push_back(static_cast<std::uint8_t>(*spec.vlan));
  }
  f.push_back(static_cast<std::uint8_t>(spec.ether_type >> 8));
  f.push_back(static_cast<std::uint8_t>(spec.ether_type));

  const std::size_t ip = f.size();
  f.resize(ip + total, 0);
  f[ip] = static_cast<std::uint8_t>(0x40 | (ip_len / 4));
  put16(f, ip + 2, static_cast<std::uint16_t>(total));
  put16(f, ip + 4, spec.ip_id);
  put16(f, ip + 6, spec.dont_fragment ? 0x4000 : 0);
  f[ip + 8] = spec.ttl;
  f[ip + 9] = spec.protocol;
  std::copy(spec.src_ip.begin(), spec.src_ip.end(), f.begin() + static_cast<std::ptrdiff_t>(ip + 12));
  std::copy(spec.dst_ip.begin(), spec.dst_ip.end(), f.begin() + static_cast<std::ptrdiff_t>(ip + 16));
  std::copy(ip_opts.begin(), ip_opts.end(), f.begin() + static_cast<std::ptrdiff_t>(ip + 20));
  put16(f, ip + 10, ip_checksum(f, ip, ip_len));

  const std::size_t th = ip + ip_len;
  put16(f, th, spec.src_port);
  put16(f, th + 2, spec.dst_port);
  if (tcp) {
    put16(f, th + 4, 0x1000);
    put16(f, th + 8, 0x2000);
    f[th + 12] = static_cast<std::uint8_t>((th_len / 4) << 4);
    f[th + 13] = spec.tcp_flags;
    put16(f, th + 14, spec.window);
    std::copy(tcp_opts.begin(), tcp_opts.end(), f.begin() + static_cast<std::ptrdiff_t>(th + 20));
  } else {
    put16(f, th + 4, static_cast<std::uint16_t>(8 + spec.payload.size()));
  }
  std::copy(spec.payload.begin(), spec.payload.end(), f.begin() + static_cast<std::ptrdiff_t>(th + th_len));
  return f;
}

std::vector<std::uint8_t> synthetic_frame(std::uint64_t seed, std::size_t index, bool anomalous) {
  Rng rng(derive_seed(derive_seed(seed, anomalous ? "anomaly" : "normal"), static_cast<std::uint64_t>(index)));
  FrameSpec s = anomalous ? anomaly_spec(rng) : normal_spec(rng);
  s.src_ip = {192, 168, static_cast<std::uint8_t>(uniform(rng, 0, 3)), static_cast<std::uint8_t>(uniform(rng, 2, 250))};
  s.dst_ip = {static_cast<std::uint8_t>(uniform(rng, 11, 200)), static_cast<std::uint8_t>(uniform(rng, 0, 255)),
              static_cast<std::uint8_t>(uniform(rng, 0, 255)), static_cast<std::uint8_t>(uniform(rng, 1, 254))};
  return build_frame(s);
}

Corpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_normal, std::size_t n_anomaly) {
  Corpus c;
  auto fill = [&](std::vector<packet::EncodedPacket>& out, std::size_t n, bool anomalous) {
    const std::string file = anomalous ? "synthetic:anomaly" : "synthetic:normal";
    const auto label = anomalous ? packet::Label::Anomaly : packet::Label::Normal;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      packet::RawPacket raw;
      raw.capture_index = i;
      raw.link_bytes = synthetic_frame(seed, i, anomalous);
      raw.caplen = raw.origlen = static_cast<std::uint32_t>(raw.link_bytes.size());
      auto encoded = packet::encode_frame(raw, packet::kLinkTypeEthernet, label, file);
      if (!encoded) throw Error(ErrorCode::BadConfig, "synthetic frame was dropped by the cleaner");
      out.push_back(std::move(*encoded));
    }
  };
  fill(c.normal, n_normal, false);
  fill(c.anomaly, n_anomaly, true);
  return c;
}

double mean_value(const std::vector<packet::EncodedPacket>& packets) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& p : packets) {
    for (double v : p.values) total += v;
    count += p.values.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace flowgate::corpus
