// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint format (all integers little-endian):
//   magic "DYSI" | u32 version | u64 config digest | u64 global step
//   u32 tensor count | tensors
//   u8 has_optimizer | [u64 adam step | f64 beta1 | f64 beta2 | f64 eps
//                       u32 tensor count | tensors]
// tensor := u16 name length | name bytes | u8 rank | u32 dims | f32 payload
// Optimizer moment tensors are named "m:<param>" and "v:<param>".

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dysi/model.hpp"
#include "dysi/optimizer.hpp"
#include "dysi/tensor.hpp"

namespace dysi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_digest = 0;
  std::uint64_t step = 0;
  std::vector<NamedTensor> params;
  bool has_optimizer = false;
  std::uint64_t optimizer_step = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  std::vector<NamedTensor> moments;
};

Checkpoint snapshot(const Transformer& model, const OptimizerState* optimizer,
                    std::uint64_t step, std::uint64_t config_digest);

// Loads parameters (and optimizer state when present and requested) into an
// existing model; names and shapes must match exactly.
void restore(const Checkpoint& checkpoint, Transformer& model, OptimizerState* optimizer);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Element-wise mean of the parameter tensors; optimizer state is dropped.
// Mismatched names or shapes are refused.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints);

// Digest binding a checkpoint to the model shape and vocabulary it was
// trained with.
std::uint64_t config_digest(const ModelConfig& config, const Vocabulary& vocab);

}  // namespace dysi
