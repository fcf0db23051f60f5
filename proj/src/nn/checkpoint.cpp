#include "nowcast/nn/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <string>

#include "nowcast/binary_io.hpp"

namespace nowcast::nn {

namespace {

constexpr std::string_view kMagic = "PNC1";

std::string header_text(const UNetConfig& c) {
  char eps[64], mom[64];
  std::snprintf(eps, sizeof eps, "%.17g", c.bn_epsilon);
  std::snprintf(mom, sizeof mom, "%.17g", c.bn_momentum);
  return "in_channels=" + std::to_string(c.in_channels) + "\n" +
         "n_classes=" + std::to_string(c.n_classes) + "\n" +
         "base_width=" + std::to_string(c.base_width) + "\n" +
         "depth=" + std::to_string(c.depth) + "\n" + "bn_epsilon=" + eps + "\n" +
         "bn_momentum=" + mom + "\n";
}

UNetConfig parse_header(std::string_view text) {
  std::map<std::string, std::string> kv;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("bad checkpoint header line");
    kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("checkpoint header lacks ") + key);
    return it->second;
  };
  auto get_int = [&](const char* key) {
    const std::string& s = get(key);
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw FormatError(std::string("bad checkpoint value for ") + key);
    return v;
  };
  auto get_double = [&](const char* key) {
    try {
      std::size_t used = 0;
      const std::string& s = get(key);
      const double v = std::stod(s, &used);
      if (used != s.size()) throw FormatError("trailing characters");
      return v;
    } catch (const std::logic_error&) {
      throw FormatError(std::string("bad checkpoint value for ") + key);
    }
  };
  UNetConfig c;
  c.in_channels = get_int("in_channels");
  c.n_classes = get_int("n_classes");
  c.base_width = get_int("base_width");
  c.depth = get_int("depth");
  c.bn_epsilon = get_double("bn_epsilon");
  c.bn_momentum = get_double("bn_momentum");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  return c;
}

UNetConfig read_header(io::ByteReader& r) {
  if (r.bytes(4) != kMagic) throw FormatError("not a PNC1 checkpoint");
  const std::uint32_t len = r.u32();
  return parse_header(r.bytes(len));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const UNet<float>& model) {
  io::ByteWriter w;
  w.bytes(kMagic);
  const std::string header = header_text(model.config());
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  const auto& store = model.params();
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.dims.size()));
    for (int d : p.dims) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value) w.f32(v);
  }
  return w.take();
}

UNetConfig checkpoint_config(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  return read_header(r);
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, UNet<float>& model) {
  io::ByteReader r(bytes);
  const UNetConfig cfg = read_header(r);
  if (!(cfg == model.config())) throw ShapeMismatch("checkpoint configuration differs from model");
  auto& store = model.params();
  const std::uint32_t count = r.u32();
  if (count != store.size())
    throw ShapeMismatch("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                        std::to_string(store.size()));
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(r.bytes(r.u32()));
    Parameter<float>* p = store.find(name);
    if (!p) throw ShapeMismatch("unknown tensor " + name + " in checkpoint");
    if (!seen.insert(name).second) throw FormatError("tensor " + name + " appears twice");
    const std::uint32_t rank = r.u32();
    if (rank != p->dims.size()) throw ShapeMismatch("rank mismatch for " + name);
    for (std::uint32_t k = 0; k < rank; ++k) {
      if (r.u32() != static_cast<std::uint32_t>(p->dims[k]))
        throw ShapeMismatch("dimension mismatch for " + name);
    }
    for (auto& v : p->value) v = r.f32();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const UNet<float>& model) {
  io::write_file(path, encode_checkpoint(model));
}

UNet<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  UNet<float> model(checkpoint_config(bytes), 0);
  decode_checkpoint(bytes, model);
  return model;
}

}  // namespace nowcast::nn
