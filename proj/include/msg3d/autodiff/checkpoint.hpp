#pragma once

#include "msg3d/autodiff/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace msg3d::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Binary layout, all integers little-endian:
//   "MSG3DCKP"  u32 version(=1)  u64 count
//   count x { u32 name_len, name bytes, u32 rank, rank x u64 dims,
//             numel x f64 (IEEE-754, little-endian) }
void save_checkpoint(std::ostream& out, const std::vector<NamedTensor>& entries);
/// @throws std::runtime_error on a truncated or malformed stream.
std::vector<NamedTensor> load_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into same-named tensors of `target`.
/// @throws std::runtime_error if a name is missing or shapes differ.
void restore_values(const std::vector<NamedTensor>& source, std::vector<NamedTensor>& target);

}  // namespace msg3d::ad
