#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sbcb/raster.hpp"
#include "sbcb/tensor.hpp"

SBCB_NAMESPACE_BEGIN

/// RGB image as a (1, 3, H, W) tensor in [0, 1]. Throws naming the path when
/// the file is missing or cannot be decoded.
Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image);

/// Single-channel 8- or 16-bit PNG of integer ids.
LabelMap read_label_png(const std::filesystem::path& path);
/// Writes 8-bit when every value fits, 16-bit otherwise.
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

/// 0/255 PNG.
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);
/// Interleaved RGB bytes.
void write_rgb_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int height, int width);

SBCB_NAMESPACE_END
