#pragma once

// Versioned binary container for trained parameters.
//
//   "FLOWGATE1" | u32 version | str stage | u64 fingerprint | u64 seed
//   | str config | str metadata | u32 n_tables
//   | n_tables x (str name | u64 body_bytes | body)
//   body = u32 n_tensors | n_tensors x (str name | u32 rows | u32 cols | f64[rows*cols])
//
// Integers and doubles are little-endian; str is u32 length + bytes. Every
// table carries its byte length so a loader can skip tables it must not read.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flowgate/config.hpp"
#include "flowgate/nn.hpp"

namespace flowgate::checkpoint {

inline constexpr char kMagic[] = "FLOWGATE1";
inline constexpr std::uint32_t kVersion = 1;

enum class Stage { Extractor, Flow, Classifier };

const char* to_string(Stage s);

struct NamedTensor {
  std::string name;
  nn::Tensor value;
};

struct ParamTable {
  std::string name;
  std::vector<NamedTensor> tensors;

  std::size_t parameter_count() const;
};

struct Checkpoint {
  Stage stage = Stage::Extractor;
  std::uint64_t fingerprint = 0;
  std::uint64_t seed = 0;
  KeyValues config;
  std::string metadata;
  std::vector<ParamTable> tables;

  const ParamTable& table(const std::string& name) const;
  bool has_table(const std::string& name) const;
  std::size_t parameter_count() const;
};

/// Hash of the canonical config text.
std::uint64_t fingerprint(const KeyValues& config);

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
void save(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Records which parameter tables a load touched.
struct LoadTrace {
  std::vector<std::string> tables_read;
  std::vector<std::string> tables_skipped;
  std::size_t parameters_read = 0;
};

struct LoadOptions {
  std::optional<Stage> expected_stage;
  /// When set, only these tables are parsed; others are skipped unread.
  std::optional<std::set<std::string>> only_tables;
  LoadTrace* trace = nullptr;
};

/// Verifies magic, version, stage tag and config fingerprint.
Checkpoint load(const std::filesystem::path& path, const LoadOptions& options = {});
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const LoadOptions& options = {});

ParamTable table_from_mlp(const std::string& name, const nn::Mlp& net);
/// Copies tensors into `net`, rejecting any shape or count mismatch.
void load_mlp(const ParamTable& table, nn::Mlp& net);

}  // namespace flowgate::checkpoint
