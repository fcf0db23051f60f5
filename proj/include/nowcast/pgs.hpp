#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nowcast/grid.hpp"

namespace nowcast {

/// A time series of frames of one variable on one grid, stored time-major.
struct GridStack {
  Variable variable = Variable::CRF;
  GridSpec spec;
  std::vector<std::int64_t> timestamps;
  std::vector<float> values;  // T * H * W, NaN = missing

  std::size_t n_frames() const { return timestamps.size(); }
  std::span<const float> plane(std::size_t k) const {
    return std::span<const float>(values).subspan(k * spec.cells(), spec.cells());
  }
  GridFrame frame(std::size_t k) const;
  void validate() const;
};

/// Serializes to the "PGS1" container: magic, u32 header length, key=value
/// header lines, then little-endian float32 values.
std::vector<std::uint8_t> encode_pgs(const GridStack& stack);
GridStack decode_pgs(std::span<const std::uint8_t> bytes);

void write_pgs(const std::filesystem::path& path, const GridStack& stack);
GridStack read_pgs(const std::filesystem::path& path);

}  // namespace nowcast
