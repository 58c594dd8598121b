#pragma once

#include "selim/tensor/autograd.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace selim::ad {

inline constexpr std::string_view kCheckpointMagic = "SELIM-CKPT-v1";

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Binary layout: magic line, u64 count, then per tensor
/// {u32 name length, name bytes, u64 rows, u64 cols, rows*cols little-endian f64, row-major}.
void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter> params);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params` by name; shapes must match.
void restore_parameters(std::span<Parameter> params, const std::vector<NamedTensor>& tensors);

}  // namespace selim::ad
