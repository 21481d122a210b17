#pragma once

// Binary tensor files ("SGT1").
//
// Layout, all integers little-endian:
//   bytes 0..3   magic "SGT1"
//   byte  4      dtype code (0 = u8, 1 = u16, 2 = f32)
//   byte  5      ndim
//   8 * ndim     shape, one u64 per dimension
//   payload      row-major values, product(shape) * sizeof(dtype) bytes

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sidgan::io {

enum class DType : std::uint8_t { U8 = 0, U16 = 1, F32 = 2 };

inline constexpr char kTensorMagic[4] = {'S', 'G', 'T', '1'};

std::size_t dtype_size(DType dtype);
DType dtype_of(const torch::Tensor& t);  // throws FormatError for unsupported dtypes

// Encodes to the byte layout above. The tensor must live on the CPU.
std::vector<std::uint8_t> encode_tensor(const torch::Tensor& data);
torch::Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const torch::Tensor& data);
torch::Tensor read_tensor(const std::filesystem::path& path);

}  // namespace sidgan::io
