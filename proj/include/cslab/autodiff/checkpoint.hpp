#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cslab/autodiff/tensor.hpp"

namespace cslab::ad {

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

// Layout: u64 little-endian header length, JSON header
// [{"name","dtype":"f32","shape","offset"}], then the payload. Offsets are relative to the
// payload start and 64-byte aligned; values are little-endian f32, row-major.
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

const Tensor<float>& find_tensor(const std::vector<NamedTensor>& tensors, std::string_view name);

}  // namespace cslab::ad
