#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirlab {

// Flat binary container shared by checkpoints, buffer dumps and pool files:
// 4-byte magic, u32 version, u32 array count, a shape table (u32 ndim +
// u64 dims per array), then all payloads as row-major 64-bit reals.
// Little-endian host assumed.
inline constexpr std::uint32_t kContainerVersion = 1;

void write_tensor_container(std::ostream& out, const char magic[4], const std::vector<const Tensor*>& arrays);
std::vector<Tensor> read_tensor_container(std::istream& in, const char magic[4]);

void write_tensor_container_file(const std::string& path, const char magic[4],
                                 const std::vector<const Tensor*>& arrays);
std::vector<Tensor> read_tensor_container_file(const std::string& path, const char magic[4]);

}  // namespace cirlab
