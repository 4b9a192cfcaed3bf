#pragma once

// Flat key-value configuration: one "key = value" per line, '#' comments.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace flowgate {

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, const std::vector<std::size_t>& values);

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string get(const std::string& key, const char* fallback) const {
    return get(key, std::string(fallback));
  }
  double get(const std::string& key, double fallback) const;
  std::int64_t get(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get(const std::string& key, std::uint64_t fallback) const;
  int get(const std::string& key, int fallback) const;
  bool get(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get(const std::string& key, const std::vector<std::size_t>& fallback) const;

  /// Keys starting with `prefix`, with the prefix removed.
  KeyValues section(const std::string& prefix) const;
  /// Copies every entry of `other` under `prefix`.
  void merge(const KeyValues& other, const std::string& prefix = "");

  /// Sorted "key = value" lines; stable input for fingerprints.
  std::string to_text() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace flowgate
