#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mat/model.hpp"

// Binary checkpoint format:
//   magic "MATCKPT1" (8 bytes)
//   u32 LE version = 1
//   u32 LE config blob length, then the blob as UTF-8 key=value lines
//   u32 LE tensor count
//   per tensor: u16 LE name length, name, u8 ndim, ndim x u64 LE dims,
//               payload as IEEE-754 binary32 LE row-major
//   u64 LE training step
namespace mat {

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string config_blob;  // written back verbatim on save
  ModelConfig config;
  std::vector<NamedTensor> tensors;  // file order
  uint64_t step = 0;
};

// Canonical key=value serialization of a model config; parse/serialize is
// idempotent so round-trips are byte-stable.
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& blob);

Checkpoint checkpoint_from_model(const Model<float>& m, uint64_t step);
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

inline void save_model(const Model<float>& m, uint64_t step, const std::string& path) {
  save_checkpoint(checkpoint_from_model(m, step), path);
}

// Warm start: duplicates the single attention branch of a trained base model
// across every branch of the target; embeddings, FFN and layer norms are
// copied once. The target config may differ from the base only in n_a (and
// the training-only knobs rho / drop_mode).
Model<float> proximal_init(const Checkpoint& base, const ModelConfig& target_cfg);
Model<float> proximal_init(const Checkpoint& base, int target_na);

}  // namespace mat
