#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nowcast/grid.hpp"

namespace nowcast {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> encode_png(const GrayImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Gray levels of the difference column.
inline constexpr std::uint8_t kDiffNone = 0;
inline constexpr std::uint8_t kDiffFalseAlarm = 85;
inline constexpr std::uint8_t kDiffMiss = 170;
inline constexpr std::uint8_t kDiffHit = 255;

/// One row per class: target | prediction | difference, separated by a
/// one-pixel gray gutter. Target and prediction are white where the class
/// is present; invalid target pixels are drawn mid-gray.
GrayImage render_panel(const ClassMap& target, const ClassMap& prediction);

}  // namespace nowcast
