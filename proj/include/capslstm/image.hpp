#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "capslstm/tensor.hpp"

namespace capslstm {

// Decodes a binary PPM (P6, maxval 255) into [H,W,3] with values 0..255.
// P5/P4 (non-RGB) raise ValidationError; other defects raise FormatError.
Tensor<float> decode_ppm(std::span<const unsigned char> bytes, const std::string& source = "<memory>");

// Encodes [H,W,3] values in 0..255 as P6; values are clamped and rounded half-up.
std::vector<unsigned char> encode_ppm(const Tensor<float>& rgb255);

// PPM always; PNG (8-bit RGB) when built with libpng.
Tensor<float> decode_image(const std::filesystem::path& path);
bool png_supported() noexcept;

void write_ppm(const std::filesystem::path& path, const Tensor<float>& rgb255);

// Bilinear resampling of [H,W,C] with half-pixel centers and edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width);

}  // namespace capslstm
