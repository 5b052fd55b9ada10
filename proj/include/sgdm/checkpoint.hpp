#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sgdm/tensor.hpp"

namespace sgdm {

// Binary tensor container:
//   magic "SGDM" | version u32 LE | tensor count u32 LE | per tensor:
//   name length u16 LE | UTF-8 name | ndim u8 | dims u32 LE each |
//   float32 LE payload.
// Save -> load -> save round-trips bitwise.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace sgdm
