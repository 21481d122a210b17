#include "sidgan/tensorio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sidgan/error.hpp"

namespace sidgan::io {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written by memcpy of little-endian host values");

namespace {

constexpr std::size_t kHeaderFixed = 6;

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

torch::ScalarType scalar_type_of(DType d) {
  switch (d) {
    case DType::U8: return torch::kUInt8;
    case DType::U16: return torch::kUInt16;
    case DType::F32: return torch::kFloat32;
  }
  throw FormatError("unknown dtype code");
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::U8: return 1;
    case DType::U16: return 2;
    case DType::F32: return 4;
  }
  throw FormatError("unknown dtype code");
}

DType dtype_of(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kUInt8: return DType::U8;
    case torch::kUInt16: return DType::U16;
    case torch::kFloat32: return DType::F32;
    default:
      throw FormatError(std::string("unsupported tensor dtype ") + c10::toString(t.scalar_type()));
  }
}

std::vector<std::uint8_t> encode_tensor(const torch::Tensor& data) {
  const DType dtype = dtype_of(data);
  if (!data.device().is_cpu()) throw FormatError("tensor must be on the CPU to serialize");
  if (data.dim() > 255) throw FormatError("tensor rank exceeds 255");
  const torch::Tensor flat = data.contiguous();

  std::vector<std::uint8_t> out(kTensorMagic, kTensorMagic + 4);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(flat.dim()));
  for (auto d : flat.sizes()) append_u64(out, static_cast<std::uint64_t>(d));
  const std::size_t nbytes = static_cast<std::size_t>(flat.numel()) * dtype_size(dtype);
  const auto* src = static_cast<const std::uint8_t*>(flat.data_ptr());
  out.insert(out.end(), src, src + nbytes);
  return out;
}

torch::Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0)
    throw FormatError("bad magic: not an SGT1 tensor file");
  if (bytes.size() < kHeaderFixed) throw FormatError("truncated header");
  const auto code = bytes[4];
  if (code > static_cast<std::uint8_t>(DType::F32))
    throw FormatError("unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t ndim = bytes[5];
  const std::size_t header = kHeaderFixed + 8 * ndim;
  if (bytes.size() < header) throw FormatError("truncated shape block");

  std::vector<std::int64_t> shape(ndim);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = read_u64(bytes, kHeaderFixed + 8 * i);
    if (d > static_cast<std::uint64_t>(INT64_MAX)) throw FormatError("dimension overflows int64");
    shape[i] = static_cast<std::int64_t>(d);
    count *= d;
  }
  const std::uint64_t expected = count * dtype_size(dtype);
  const std::uint64_t actual = bytes.size() - header;
  if (actual < expected)
    throw FormatError("truncated payload: expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(actual));
  if (actual > expected)
    throw FormatError("payload longer than shape declares (" + std::to_string(actual) + " > " +
                      std::to_string(expected) + ")");

  auto t = torch::empty(shape, torch::TensorOptions().dtype(scalar_type_of(dtype)));
  if (expected > 0) std::memcpy(t.data_ptr(), bytes.data() + header, expected);
  return t;
}

void write_tensor(const std::filesystem::path& path, const torch::Tensor& data) {
  const auto bytes = encode_tensor(data);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

torch::Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace sidgan::io
