#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mhsum/num/tensor.hpp"

namespace mhsum::num {

using NamedTensor = std::pair<std::string, Tensor>;

// Checkpoint layout, all integers little-endian:
//   "MHSUMCK1"                       8-byte magic
//   u64 record_count
//   record_count x {
//     u32 name_len, name bytes
//     u32 ndim, u64 dims[ndim]
//     f64 values[prod(dims)]         raw IEEE-754 bits
//   }
std::string serialize_checkpoint(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace mhsum::num
