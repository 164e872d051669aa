#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rceed/model.hpp"

namespace rceed {

// File layout, all integers 32-bit little-endian:
//   "RCED" | version | count | count x (name_len, name, rank, extents..., f32 values...)
//   | CRC-32 of everything after the version field
constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

std::vector<unsigned char> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(const std::vector<unsigned char>& bytes);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// Parameters plus the model configuration stored as `config.<key>` tensors.
std::vector<NamedTensor> checkpoint_tensors(const Model<float>& model, std::size_t step = 0);
ModelConfig checkpoint_config(const std::vector<NamedTensor>& tensors);
std::size_t checkpoint_step(const std::vector<NamedTensor>& tensors);
// Copies parameter values into `model`; names and shapes must match exactly.
void restore_parameters(Model<float>& model, const std::vector<NamedTensor>& tensors);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     std::size_t step = 0);

struct LoadedModel {
  ModelConfig config;
  std::size_t step = 0;
  std::unique_ptr<Model<float>> model;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace rceed
