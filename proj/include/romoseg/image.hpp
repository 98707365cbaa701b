#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "romoseg/common.hpp"

namespace romoseg {

// Binary motion mask: 255 marks dynamic pixels, 0 static. No other values
// are permitted.
struct MaskImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // row-major, size width*height

  bool at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool dynamic) {
    values[static_cast<std::size_t>(y) * width + x] = dynamic ? 255 : 0;
  }
  std::size_t count_dynamic() const;
};

MaskImage make_mask(int width, int height);

void validate_mask(const MaskImage& mask);

// Binary PGM (P5, maxval 255); byte-deterministic, used for bit-exact tests.
void write_mask(const MaskImage& mask, const std::filesystem::path& path);
MaskImage read_mask(const std::filesystem::path& path);

// Lenient PGM load for evaluation inputs: any nonzero value counts as
// foreground, so multi-label ground-truth images merge into one mask.
MaskImage read_mask_merged(const std::filesystem::path& path);

// Grayscale 8-bit PNG export for viewing.
void write_mask_png(const MaskImage& mask, const std::filesystem::path& path);

}  // namespace romoseg
