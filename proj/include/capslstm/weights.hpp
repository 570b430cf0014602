#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "capslstm/model.hpp"

namespace capslstm {

// Binary weights file, all integers u32 little-endian:
//   "CAPW" | version | tensor count
//   per tensor: name length | UTF-8 name | rank | extents... | dtype tag | payload
// dtype tag 0 = f32; payload is the row-major values as little-endian f32.
inline constexpr char kWeightsMagic[4] = {'C', 'A', 'P', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

std::vector<char> encode_weights(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_weights(std::span<const char> bytes);

void write_weights_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_weights_file(const std::filesystem::path& path);

void save_weights(const Model<float>& model, const std::filesystem::path& path);

// Builds the configured architecture and fills it from `path`. Rejects any
// name, count or shape disagreement with a FormatError naming the tensor.
Model<float> load_weights(const std::filesystem::path& path, const ModelConfig& config);
void load_weights_into(Model<float>& model, const std::filesystem::path& path);

}  // namespace capslstm
