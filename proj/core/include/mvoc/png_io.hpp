#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mvoc/tensor.hpp"

namespace mvoc {

// 8-bit RGB. Tensor layout [H,W,3], values in [0,1]; quantization is
// round(v*255)/255 so a write/read round-trip is exact for quantized inputs.
void write_png_rgb(const std::filesystem::path& p, const Tensor& image);
Tensor read_png_rgb(const std::filesystem::path& p);

// 8-bit grayscale carrying small integer labels (object IDs).
void write_png_gray(const std::filesystem::path& p, const std::vector<std::uint8_t>& data,
                    int height, int width);
std::vector<std::uint8_t> read_png_gray(const std::filesystem::path& p, int& height, int& width);

}  // namespace mvoc
