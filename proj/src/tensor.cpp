#include "romoseg/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace romoseg {

static_assert(std::endian::native == std::endian::little,
              "payloads are little-endian; big-endian hosts would need byte swaps");

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

std::string dtype_descr(Dtype d) { return d == Dtype::kF32 ? "<f4" : "|u1"; }

[[noreturn]] void format_fail(const std::string& origin, std::size_t offset,
                              const std::string& what) {
  std::ostringstream os;
  os << origin << ": " << what << " (at byte offset " << offset << ")";
  throw FormatError(os.str());
}

// Extracts the value substring for `key` out of the python dict literal.
std::string dict_value(const std::string& header, const std::string& key,
                       const std::string& origin, std::size_t header_offset) {
  const std::string quoted = "'" + key + "'";
  const std::size_t key_pos = header.find(quoted);
  if (key_pos == std::string::npos)
    format_fail(origin, header_offset, "header dict missing key " + quoted);
  std::size_t pos = header.find(':', key_pos + quoted.size());
  if (pos == std::string::npos)
    format_fail(origin, header_offset + key_pos, "missing ':' after " + quoted);
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  if (pos >= header.size())
    format_fail(origin, header_offset + pos, "truncated value for " + quoted);
  if (header[pos] == '\'') {
    const std::size_t end = header.find('\'', pos + 1);
    if (end == std::string::npos)
      format_fail(origin, header_offset + pos, "unterminated string for " + quoted);
    return header.substr(pos + 1, end - pos - 1);
  }
  if (header[pos] == '(') {
    const std::size_t end = header.find(')', pos + 1);
    if (end == std::string::npos)
      format_fail(origin, header_offset + pos, "unterminated tuple for " + quoted);
    return header.substr(pos, end - pos + 1);
  }
  std::size_t end = pos;
  while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
  return header.substr(pos, end - pos);
}

std::vector<std::size_t> parse_shape(const std::string& tuple, const std::string& origin,
                                     std::size_t header_offset) {
  std::vector<std::size_t> shape;
  std::size_t i = 1;  // skip '('
  while (i < tuple.size() && tuple[i] != ')') {
    while (i < tuple.size() && (tuple[i] == ' ' || tuple[i] == ',')) ++i;
    if (i >= tuple.size() || tuple[i] == ')') break;
    if (!std::isdigit(static_cast<unsigned char>(tuple[i])))
      format_fail(origin, header_offset, "non-numeric entry in shape tuple " + tuple);
    std::size_t dim = 0;
    while (i < tuple.size() && std::isdigit(static_cast<unsigned char>(tuple[i]))) {
      dim = dim * 10 + static_cast<std::size_t>(tuple[i] - '0');
      ++i;
    }
    shape.push_back(dim);
  }
  return shape;
}

void validate_shape(const TensorFile& t, const std::string& origin) {
  if (t.shape.size() != 2 && t.shape.size() != 3)
    throw FormatError(origin + ": shape rank must be 2 or 3, got rank " +
                      std::to_string(t.shape.size()));
  const std::size_t expected = t.element_count() * dtype_size(t.dtype);
  if (expected != t.data.size())
    throw FormatError(origin + ": integrity error, payload has " +
                      std::to_string(t.data.size()) + " bytes but shape requires " +
                      std::to_string(expected));
}

}  // namespace

float TensorFile::f32(std::size_t flat_index) const {
  float v;
  std::memcpy(&v, data.data() + flat_index * 4, 4);
  return v;
}

void TensorFile::set_f32(std::size_t flat_index, float value) {
  std::memcpy(data.data() + flat_index * 4, &value, 4);
}

TensorFile make_tensor_f32(const std::vector<std::size_t>& shape) {
  TensorFile t;
  t.shape = shape;
  t.dtype = Dtype::kF32;
  t.data.assign(t.element_count() * 4, 0);
  return t;
}

TensorFile make_tensor_u8(const std::vector<std::size_t>& shape) {
  TensorFile t;
  t.shape = shape;
  t.dtype = Dtype::kU8;
  t.data.assign(t.element_count(), 0);
  return t;
}

TensorFile decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 10) format_fail(origin, bytes.size(), "file shorter than NPY preamble");
  if (std::memcmp(bytes.data(), kMagic, 6) != 0) format_fail(origin, 0, "bad NPY magic");
  if (bytes[6] != 1 || bytes[7] != 0)
    format_fail(origin, 6, "unsupported NPY version " + std::to_string(bytes[6]) + "." +
                               std::to_string(bytes[7]));
  const std::size_t header_len = static_cast<std::size_t>(bytes[8]) |
                                 (static_cast<std::size_t>(bytes[9]) << 8);
  const std::size_t payload_start = 10 + header_len;
  if (bytes.size() < payload_start)
    format_fail(origin, 8, "declared header length exceeds file size");
  const std::string header(reinterpret_cast<const char*>(bytes.data()) + 10, header_len);

  TensorFile t;
  const std::string descr = dict_value(header, "descr", origin, 10);
  if (descr == "<f4") {
    t.dtype = Dtype::kF32;
  } else if (descr == "|u1") {
    t.dtype = Dtype::kU8;
  } else {
    format_fail(origin, 10, "unsupported descr '" + descr + "' (expected '<f4' or '|u1')");
  }
  const std::string fortran = dict_value(header, "fortran_order", origin, 10);
  if (fortran != "False") format_fail(origin, 10, "fortran_order must be False");
  t.shape = parse_shape(dict_value(header, "shape", origin, 10), origin, 10);

  t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(payload_start), bytes.end());
  validate_shape(t, origin);
  return t;
}

std::vector<std::uint8_t> encode_tensor(const TensorFile& tensor) {
  validate_shape(tensor, "encode_tensor");
  std::ostringstream dict;
  dict << "{'descr': '" << dtype_descr(tensor.dtype) << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < tensor.shape.size(); ++i) {
    if (i > 0) dict << ", ";
    dict << tensor.shape[i];
  }
  if (tensor.shape.size() == 1) dict << ",";
  dict << "), }";
  std::string header = dict.str();
  // Pad with spaces so preamble + header is a multiple of 64, then '\n'.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::vector<std::uint8_t> bytes;
  bytes.reserve(10 + header.size() + tensor.data.size());
  bytes.insert(bytes.end(), kMagic, kMagic + 6);
  bytes.push_back(1);
  bytes.push_back(0);
  bytes.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  bytes.push_back(static_cast<std::uint8_t>((header.size() >> 8) & 0xff));
  bytes.insert(bytes.end(), header.begin(), header.end());
  bytes.insert(bytes.end(), tensor.data.begin(), tensor.data.end());
  return bytes;
}

TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

void write_tensor(const TensorFile& tensor, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace romoseg
