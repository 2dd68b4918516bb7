#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tavr/tensor.hpp"

namespace tavr {

// Binary tensor container: magic "TAVR", u32 version, u32 rank, u64 extents,
// then float32 payload, row-major, little-endian throughout.
void save_tensor(const std::string& path, const Shape& shape, const std::vector<float>& data);
void save_tensor(const std::string& path, const Tensor<float>& t);

std::pair<Shape, std::vector<float>> load_tensor_raw(const std::string& path);
Tensor<float> load_tensor(const std::string& path);

}  // namespace tavr
