#include "romoseg/image.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace romoseg {

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

std::vector<std::uint8_t> read_pgm_payload(const std::filesystem::path& path, int& width,
                                           int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask file " + path.string());
  if (pgm_token(in) != "P5") throw FormatError(path.string() + ": not a P5 PGM file");
  const std::string w = pgm_token(in);
  const std::string h = pgm_token(in);
  const std::string maxval = pgm_token(in);
  try {
    width = std::stoi(w);
    height = std::stoi(h);
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM dimensions '" + w + " " + h + "'");
  }
  if (width <= 0 || height <= 0)
    throw FormatError(path.string() + ": non-positive PGM dimensions");
  if (maxval != "255") throw FormatError(path.string() + ": PGM maxval must be 255");

  std::vector<std::uint8_t> payload(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size()))
    throw FormatError(path.string() + ": truncated PGM payload");
  return payload;
}

void append_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  append_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  append_u32_be(out, crc);
}

}  // namespace

std::size_t MaskImage::count_dynamic() const {
  std::size_t n = 0;
  for (const std::uint8_t v : values) n += (v != 0);
  return n;
}

MaskImage make_mask(int width, int height) {
  MaskImage m;
  m.width = width;
  m.height = height;
  m.values.assign(static_cast<std::size_t>(width) * height, 0);
  return m;
}

void validate_mask(const MaskImage& mask) {
  if (mask.width <= 0 || mask.height <= 0)
    throw ContractError("mask has non-positive dimensions");
  if (mask.values.size() != static_cast<std::size_t>(mask.width) * mask.height)
    throw ContractError("mask value count does not match dimensions");
  for (const std::uint8_t v : mask.values) {
    if (v != 0 && v != 255)
      throw ContractError("mask contains value " + std::to_string(v) +
                          "; only 0 and 255 are allowed");
  }
}

void write_mask(const MaskImage& mask, const std::filesystem::path& path) {
  validate_mask(mask);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.values.data()),
            static_cast<std::streamsize>(mask.values.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

MaskImage read_mask(const std::filesystem::path& path) {
  MaskImage m;
  m.values = read_pgm_payload(path, m.width, m.height);
  for (const std::uint8_t v : m.values) {
    if (v != 0 && v != 255)
      throw FormatError(path.string() + ": mask contains value " + std::to_string(v) +
                        "; only 0 and 255 are allowed");
  }
  return m;
}

MaskImage read_mask_merged(const std::filesystem::path& path) {
  MaskImage m;
  m.values = read_pgm_payload(path, m.width, m.height);
  for (std::uint8_t& v : m.values) v = (v != 0) ? 255 : 0;
  return m;
}

void write_mask_png(const MaskImage& mask, const std::filesystem::path& path) {
  validate_mask(mask);
  // One filter byte (0 = none) per scanline.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(mask.height) * (mask.width + 1));
  for (int y = 0; y < mask.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = mask.values.data() + static_cast<std::size_t>(y) * mask.width;
    raw.insert(raw.end(), row, row + mask.width);
  }
  uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(compressed_size);
  if (compress2(compressed.data(), &compressed_size, raw.data(), static_cast<uLong>(raw.size()),
                9) != Z_OK)
    throw IoError("PNG deflate failed for " + path.string());
  compressed.resize(compressed_size);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  append_u32_be(ihdr, static_cast<std::uint32_t>(mask.width));
  append_u32_be(ihdr, static_cast<std::uint32_t>(mask.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", compressed);
  append_chunk(png, "IEND", {});

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace romoseg
