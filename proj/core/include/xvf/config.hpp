#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xvf/error.hpp"

namespace xvf {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Flat `key = value` text with `#` comments. Later assignments override
/// earlier ones. Every parse or conversion error names the source and line.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const { return entries_.contains(key); }
  std::vector<std::string> keys() const;

  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const;

  /// Fails on the first key not in `known` (or matching a `prefix.*` entry).
  void require_known(std::span<const std::string_view> known) const;

  std::string to_text() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };

  [[noreturn]] void fail_at(const std::string& key, const std::string& message) const;

  std::map<std::string, Entry> entries_;
  std::string source_ = "<config>";
};

}  // namespace xvf
