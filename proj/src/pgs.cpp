#include "nowcast/pgs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "nowcast/binary_io.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace io

namespace {

constexpr std::string_view kMagic = "PGS1";

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
T parse_number(const std::string& s, const char* key) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw FormatError(std::string("bad value for header key '") + key + "': " + s);
  return v;
}

}  // namespace

GridFrame GridStack::frame(std::size_t k) const {
  if (k >= n_frames()) throw ContractViolation("frame index out of range");
  const auto p = plane(k);
  return GridFrame(spec, variable, timestamps[k], std::vector<float>(p.begin(), p.end()));
}

void GridStack::validate() const {
  spec.validate();
  if (values.size() != n_frames() * spec.cells()) throw ShapeMismatch("stack size != T*H*W");
  if (variable == Variable::CRF &&
      std::any_of(values.begin(), values.end(), [](float x) { return x < 0.0f; }))
    throw ContractViolation("CRF stack holds negative rain");
  for (std::size_t k = 1; k < timestamps.size(); ++k) {
    if (timestamps[k] <= timestamps[k - 1]) throw IngestionError("stack timestamps not increasing");
  }
}

std::vector<std::uint8_t> encode_pgs(const GridStack& stack) {
  stack.validate();
  std::string header;
  header += "variable=" + std::string(to_string(stack.variable)) + "\n";
  header += "H=" + std::to_string(stack.spec.height) + "\n";
  header += "W=" + std::to_string(stack.spec.width) + "\n";
  header += "lon0=" + format_double(stack.spec.lon0) + "\n";
  header += "lat0=" + format_double(stack.spec.lat0) + "\n";
  header += "dlon=" + format_double(stack.spec.dlon) + "\n";
  header += "dlat=" + format_double(stack.spec.dlat) + "\n";
  header += "timestamps=";
  for (std::size_t k = 0; k < stack.timestamps.size(); ++k) {
    if (k) header += ',';
    header += std::to_string(stack.timestamps[k]);
  }
  header += "\n";

  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  for (float v : stack.values) w.f32(v);
  return w.take();
}

GridStack decode_pgs(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != kMagic) throw FormatError("not a PGS1 stream");
  const std::uint32_t header_len = r.u32();
  const std::string header(r.bytes(header_len));

  std::map<std::string, std::string> kv;
  std::istringstream lines(header);
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed header line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"variable", "H", "W", "lon0", "lat0", "dlon", "dlat", "timestamps"}) {
    if (!kv.count(key)) throw FormatError(std::string("missing header key '") + key + "'");
  }

  GridStack s;
  s.variable = parse_variable(kv["variable"]);
  s.spec.height = parse_number<int>(kv["H"], "H");
  s.spec.width = parse_number<int>(kv["W"], "W");
  s.spec.lon0 = parse_number<double>(kv["lon0"], "lon0");
  s.spec.lat0 = parse_number<double>(kv["lat0"], "lat0");
  s.spec.dlon = parse_number<double>(kv["dlon"], "dlon");
  s.spec.dlat = parse_number<double>(kv["dlat"], "dlat");
  std::istringstream ts(kv["timestamps"]);
  for (std::string tok; std::getline(ts, tok, ',');) {
    s.timestamps.push_back(parse_number<std::int64_t>(tok, "timestamps"));
  }
  s.spec.validate();

  const std::size_t n = s.n_frames() * s.spec.cells();
  if (r.remaining() != n * 4) throw FormatError("PGS1 payload size does not match header");
  s.values.resize(n);
  for (auto& v : s.values) v = r.f32();
  s.validate();
  return s;
}

void write_pgs(const std::filesystem::path& path, const GridStack& stack) {
  io::write_file(path, encode_pgs(stack));
}

GridStack read_pgs(const std::filesystem::path& path) { return decode_pgs(io::read_file(path)); }

}  // namespace nowcast
