#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nowcast/nn/unet.hpp"

namespace nowcast::nn {

// PNC1 container: "PNC1", u32 header length, key=value header lines with the
// U-Net configuration, u32 blob count, then per blob: u32 name length, name,
// u32 rank, u32 dims, little-endian float32 values.
std::vector<std::uint8_t> encode_checkpoint(const UNet<float>& model);
UNetConfig checkpoint_config(std::span<const std::uint8_t> bytes);
/// Copies every blob into the model; names, ranks and dims must all match.
void decode_checkpoint(std::span<const std::uint8_t> bytes, UNet<float>& model);

void save_checkpoint(const std::filesystem::path& path, const UNet<float>& model);
UNet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace nowcast::nn
