#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pepler/tensor.hpp"

namespace pepler {

struct CheckpointMeta {
  std::map<std::string, std::string> config;  // flat section.key snapshot
  std::uint64_t seed = 0;
  long long epoch = 0;
  double valid_loss = 0.0;
  // Row order of the prompt embedding tables; empty when not applicable.
  std::vector<std::string> users, items;
};

using TensorMap = std::map<std::string, num::Tensor<float>>;

struct Checkpoint {
  TensorMap tensors;
  CheckpointMeta meta;
};

// Binary layout: 8-byte magic "PEPLER1\0", u64 little-endian header length,
// UTF-8 JSON header (tensor name -> dtype/shape/byte_offset/byte_length plus
// metadata), then the raw little-endian f32 payload. Tensors are laid out in
// name order with contiguous offsets; loading validates all of it and
// round-trips every value bitwise.
void save_checkpoint(const std::string& path, const TensorMap& tensors,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pepler
