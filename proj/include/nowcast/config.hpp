#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace nowcast {

/// Flat key=value configuration with provenance tracking.
///
/// Values come from three layers with precedence flag > file > default.
/// Every getter that falls back to a default records it, so snapshot()
/// lists the effective configuration of a run.
class Config {
 public:
  enum class Source { Default, File, Flag };

  static Config parse(const std::string& text);
  static Config from_file(const std::filesystem::path& path);

  /// Sets a value unless a higher-precedence layer already holds the key.
  void set(const std::string& key, const std::string& value, Source source = Source::Flag);
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Sorted "key=value  # source" lines.
  std::string snapshot() const;

 private:
  struct Entry {
    std::string value;
    Source source;
  };
  const std::string* lookup(const std::string& key) const;
  void note_default(const std::string& key, const std::string& value) const;

  std::map<std::string, Entry> entries_;
  mutable std::map<std::string, Entry> defaults_used_;
};

}  // namespace nowcast
