#include "nowcast/config.hpp"

#include <charconv>
#include <sstream>

#include "nowcast/binary_io.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const char* source_name(Config::Source s) {
  switch (s) {
    case Config::Source::Default: return "default";
    case Config::Source::File: return "file";
    case Config::Source::Flag: return "flag";
  }
  return "?";
}

template <typename T>
T parse_or_throw(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("key '" + key + "' has invalid value '" + text + "'");
  return v;
}

template <typename T>
std::string render(T v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  int lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cfg.set(key, trim(line.substr(eq + 1)), Source::File);
  }
  return cfg;
}

Config Config::from_file(const std::filesystem::path& path) {
  return parse(io::read_text(path));
}

void Config::set(const std::string& key, const std::string& value, Source source) {
  auto it = entries_.find(key);
  if (it != entries_.end() && it->second.source > source) return;
  entries_[key] = Entry{value, source};
}

const std::string* Config::lookup(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second.value;
}

void Config::note_default(const std::string& key, const std::string& value) const {
  defaults_used_[key] = Entry{value, Source::Default};
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  if (const auto* v = lookup(key)) return *v;
  note_default(key, fallback);
  return fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (const auto* v = lookup(key)) return parse_or_throw<double>(key, *v);
  note_default(key, render(fallback));
  return fallback;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  if (const auto* v = lookup(key)) return parse_or_throw<long long>(key, *v);
  note_default(key, render(fallback));
  return fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (const auto* v = lookup(key)) return parse_or_throw<std::uint64_t>(key, *v);
  note_default(key, render(fallback));
  return fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (const auto* v = lookup(key)) {
    if (*v == "1" || *v == "true" || *v == "yes") return true;
    if (*v == "0" || *v == "false" || *v == "no") return false;
    throw ConfigError("key '" + key + "' expects a boolean, got '" + *v + "'");
  }
  note_default(key, fallback ? "true" : "false");
  return fallback;
}

std::string Config::snapshot() const {
  std::map<std::string, Entry> merged = defaults_used_;
  for (const auto& [k, e] : entries_) merged[k] = e;
  std::string out;
  for (const auto& [k, e] : merged) {
    out += k + "=" + e.value + "  # " + source_name(e.source) + "\n";
  }
  return out;
}

}  // namespace nowcast
