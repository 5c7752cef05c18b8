#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cardiofuse/tensor.hpp"

namespace cardiofuse {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Named-tensor container shared by dataset and checkpoint files.
///
/// Layout (all integers little-endian):
///   magic[4] | version u32 | metadata_len u64 | metadata (UTF-8 JSON)
///   | tensor_count u64 | per tensor: name_len u64, name, rank u32,
///   dims u64×rank, dtype u8 (0 = f64), data f64×numel row-major.
struct TensorArchive {
  std::string metadata;
  std::vector<NamedTensor> tensors;

  /// Throws FormatError(kMalformed) if the name is absent.
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

using Magic = std::array<char, 4>;

inline constexpr std::uint8_t kDtypeF64 = 0;

std::vector<std::uint8_t> encode_archive(const Magic& magic, std::uint32_t version, const TensorArchive& archive);
/// Throws FormatError naming the byte offset of the first problem.
TensorArchive decode_archive(std::span<const std::uint8_t> bytes, const Magic& magic, std::uint32_t version);

/// Byte size of an encoded archive, from counts and dims alone.
std::uint64_t encoded_size(const TensorArchive& archive);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace cardiofuse
