#pragma once

#include <filesystem>
#include <span>

#include "tricov/geometry.hpp"

namespace tricov {

// Luma weights used for every RGB -> gray conversion.
inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

// Reads binary or ASCII PGM/PPM (P2, P3, P5, P6). Values are scaled to [0, 1];
// colour images are converted with the luma weights.
Image read_image(const std::filesystem::path& path);

// 8-bit binary PGM. Values are mapped linearly from [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, const Image& image, float lo = 0.0f,
               float hi = 1.0f);

// Interleaved RGB -> gray.
std::vector<float> to_grayscale(std::span<const float> rgb);

}  // namespace tricov
