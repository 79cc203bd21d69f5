#pragma once

#include <filesystem>

#include "avatar/tensor.hpp"

namespace avatar {

/// Loads an 8-bit PNG as an {H, W, 3} image in [0, 1]. Gray and RGBA inputs are
/// converted to RGB (alpha is dropped).
Tensor read_png(const std::filesystem::path& path);

/// Writes an {H, W, 3} image as 8-bit RGB. Values are clamped to [0, 1] and
/// quantized round-half-up: floor(v * 255 + 0.5).
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Writes an {H, W} depth map as a 16-bit gray PNG:
/// round-half-up(65535 * (depth - near) / (far - near)), clamped.
void write_depth_png16(const std::filesystem::path& path, const Tensor& depth, double near, double far);

/// Round-trips an image through the 8-bit PNG quantizer without touching disk.
Tensor quantize_8bit(const Tensor& image);

}  // namespace avatar
