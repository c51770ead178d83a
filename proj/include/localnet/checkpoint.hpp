// Binary checkpoints: a flat list of named float tensors covering all
// trainable parameters, the batch-norm running estimates, and (optionally)
// Adam state. The caller rebuilds parameter shapes from its config; loading
// verifies every name and dimension.
//
// Layout, little-endian throughout:
//   magic "LNCHKPT\0" | u64 version=1 | u64 block_count
//   per block: u64 name_len | name bytes | u64 rank | u64 dims[rank] | f32 values
// Adam slots are stored as "adam.m.<param>" / "adam.v.<param>" plus one
// "optim.scalars" block [step_count, lr, beta1, beta2, eps]; step counts stay
// exact below 2^24.
#pragma once

#include "localnet/model.hpp"

#include <string>

namespace localnet {

void save_checkpoint(const std::string& path, NetworkParams<float>& params,
                     const AdamState<float>* opt = nullptr);

// Fills `params` (already shaped from the run config) from the file. When
// `opt` is given the checkpoint must carry optimizer state.
void load_checkpoint(const std::string& path, NetworkParams<float>& params,
                     AdamState<float>* opt = nullptr);

}  // namespace localnet
