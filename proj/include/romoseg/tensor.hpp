#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "romoseg/common.hpp"

namespace romoseg {

enum class Dtype { kF32, kU8 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::kF32 ? 4 : 1; }

// In-memory image of a tensor file. The on-disk container is the NPY v1.0
// subset: magic "\x93NUMPY", version 1.0, little-endian payload, C order,
// descr restricted to '<f4' and '|u1', shape rank 2 or 3.
struct TensorFile {
  std::vector<std::size_t> shape;
  Dtype dtype = Dtype::kF32;
  std::vector<std::uint8_t> data;  // row-major little-endian payload

  std::size_t element_count() const {
    std::size_t n = 1;
    for (const std::size_t d : shape) n *= d;
    return n;
  }

  float f32(std::size_t flat_index) const;
  void set_f32(std::size_t flat_index, float value);
  std::uint8_t u8(std::size_t flat_index) const { return data[flat_index]; }
};

TensorFile make_tensor_f32(const std::vector<std::size_t>& shape);
TensorFile make_tensor_u8(const std::vector<std::size_t>& shape);

TensorFile read_tensor(const std::filesystem::path& path);
void write_tensor(const TensorFile& tensor, const std::filesystem::path& path);

// Same container, via byte buffers (reused by the golden-fixture tests).
TensorFile decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin);
std::vector<std::uint8_t> encode_tensor(const TensorFile& tensor);

}  // namespace romoseg
