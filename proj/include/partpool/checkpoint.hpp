#pragma once

#include <map>
#include <string>

#include "partpool/tensor.hpp"

namespace partpool {

// Checkpoint file layout: magic "PPOOL1\n", then one record per named
// parameter: u32 name length, name bytes, 4 u32 shape fields, then
// N*C*H*W raw floats. All integers and floats little-endian 32-bit.
// Records are written in lexicographic name order; round-trips are
// byte-exact.

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor4<float>>& tensors);

std::map<std::string, Tensor4<float>> load_checkpoint(const std::string& path);

} // namespace partpool
