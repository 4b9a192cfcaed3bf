#include "flowgate/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowgate/error.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(ErrorCode::BadCheckpoint, "unexpected end of checkpoint");
    }
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 26)) throw Error(ErrorCode::BadCheckpoint, "implausible string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void skip(std::uint64_t n) {
    in_.seekg(static_cast<std::streamoff>(n), std::ios::cur);
    if (!in_) throw Error(ErrorCode::BadCheckpoint, "cannot skip table body");
  }

 private:
  std::istream& in_;
};

Stage stage_from_string(const std::string& s) {
  for (auto st : {Stage::Extractor, Stage::Flow, Stage::Classifier}) {
    if (s == to_string(st)) return st;
  }
  throw Error(ErrorCode::BadCheckpoint, "unknown stage tag '" + s + "'");
}

void write_table(Writer& w, const ParamTable& t) {
  Writer body;
  body.u32(static_cast<std::uint32_t>(t.tensors.size()));
  for (const auto& nt : t.tensors) {
    body.str(nt.name);
    body.u32(static_cast<std::uint32_t>(nt.value.rows()));
    body.u32(static_cast<std::uint32_t>(nt.value.cols()));
    body.raw(nt.value.data(), static_cast<std::size_t>(nt.value.size()) * sizeof(double));
  }
  w.str(t.name);
  w.u64(body.bytes.size());
  w.raw(body.bytes.data(), body.bytes.size());
}

ParamTable read_table_body(Reader& r, const std::string& name) {
  ParamTable t;
  t.name = name;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) {
      throw Error(ErrorCode::BadCheckpoint, "implausible tensor shape");
    }
    nt.value.resize(rows, cols);
    r.raw(nt.value.data(), static_cast<std::size_t>(nt.value.size()) * sizeof(double));
    t.tensors.push_back(std::move(nt));
  }
  return t;
}

Checkpoint read_stream(std::istream& in, const LoadOptions& options) {
  Reader r(in);
  char magic[sizeof kMagic - 1];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::BadCheckpoint, "bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error(ErrorCode::BadCheckpoint, "unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.stage = stage_from_string(r.str());
  if (options.expected_stage && *options.expected_stage != c.stage) {
    throw Error(ErrorCode::CheckpointMismatch, std::string("expected a ") +
                                                   to_string(*options.expected_stage) +
                                                   " checkpoint, found " + to_string(c.stage));
  }
  c.fingerprint = r.u64();
  c.seed = r.u64();
  c.config = KeyValues::parse(r.str());
  if (fingerprint(c.config) != c.fingerprint) {
    throw Error(ErrorCode::BadCheckpoint, "config fingerprint does not match stored config");
  }
  c.metadata = r.str();
  const std::uint32_t n_tables = r.u32();
  for (std::uint32_t i = 0; i < n_tables; ++i) {
    const std::string name = r.str();
    const std::uint64_t body_bytes = r.u64();
    if (options.only_tables && options.only_tables->count(name) == 0) {
      r.skip(body_bytes);
      if (options.trace) options.trace->tables_skipped.push_back(name);
      continue;
    }
    ParamTable t = read_table_body(r, name);
    if (options.trace) {
      options.trace->tables_read.push_back(name);
      options.trace->parameters_read += t.parameter_count();
    }
    c.tables.push_back(std::move(t));
  }
  return c;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Extractor: return "EXTRACTOR";
    case Stage::Flow: return "FLOW";
    case Stage::Classifier: return "CLASSIFIER";
  }
  return "EXTRACTOR";
}

std::size_t ParamTable::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

const ParamTable& Checkpoint::table(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::CheckpointMismatch, "checkpoint has no table '" + name + "'");
}

bool Checkpoint::has_table(const std::string& name) const {
  return std::any_of(tables.begin(), tables.end(), [&](const ParamTable& t) { return t.name == name; });
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tables) n += t.parameter_count();
  return n;
}

std::uint64_t fingerprint(const KeyValues& config) { return fnv1a64(config.to_text()); }

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic - 1);
  w.u32(kVersion);
  w.str(to_string(ckpt.stage));
  w.u64(fingerprint(ckpt.config));
  w.u64(ckpt.seed);
  w.str(ckpt.config.to_text());
  w.str(ckpt.metadata);
  w.u32(static_cast<std::uint32_t>(ckpt.tables.size()));
  for (const auto& t : ckpt.tables) write_table(w, t);
  return std::move(w.bytes);
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open checkpoint " + path.string());
  return read_stream(in, options);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const LoadOptions& options) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_stream(in, options);
}

ParamTable table_from_mlp(const std::string& name, const nn::Mlp& net) {
  ParamTable t;
  t.name = name;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    t.tensors.push_back({prefix + ".weight", layers[i].weight.value});
    t.tensors.push_back({prefix + ".bias", layers[i].bias.value});
  }
  return t;
}

void load_mlp(const ParamTable& table, nn::Mlp& net) {
  auto& layers = net.layers();
  if (table.tensors.size() != 2 * layers.size()) {
    throw Error(ErrorCode::CheckpointMismatch, "table '" + table.name + "' has " +
                                                   std::to_string(table.tensors.size()) +
                                                   " tensors, network expects " +
                                                   std::to_string(2 * layers.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (int k = 0; k < 2; ++k) {
      const NamedTensor& src = table.tensors[2 * i + static_cast<std::size_t>(k)];
      nn::Parameter& dst = k == 0 ? layers[i].weight : layers[i].bias;
      const std::string expected = "layer" + std::to_string(i) + (k == 0 ? ".weight" : ".bias");
      if (src.name != expected || src.value.rows() != dst.value.rows() ||
          src.value.cols() != dst.value.cols()) {
        throw Error(ErrorCode::CheckpointMismatch,
                    "table '" + table.name + "' tensor '" + src.name + "' does not match " + expected);
      }
      dst.value = src.value;
    }
  }
}

}  // namespace flowgate::checkpoint
