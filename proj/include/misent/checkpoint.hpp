#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "misent/adam.hpp"
#include "misent/model.hpp"
#include "misent/train.hpp"

namespace misent {

// Binary layout: magic "ISBT", u32 LE format version, u64 LE header length,
// UTF-8 JSON header (config, shapes, seed, step, metric log, tensor table),
// then the tensors as concatenated 32-bit LE floats in header order.
// Optimizer moments are stored as tensors named adam.m.* / adam.v.*.
inline constexpr char kCheckpointMagic[4] = {'I', 'S', 'B', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorBlob {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t adam_t = 0;
  TrainConfig train;
  EncoderConfig encoder;
  std::size_t disc_hidden = 0;
  std::string embeddings_kind;  // "trainable" | "static" | "contextual"
  std::size_t embeddings_dim = 0;
  std::string embeddings_path;  // static/contextual source file
  std::vector<std::string> vocab;  // trainable tables: tokens in row order
  std::vector<StepRecord> metrics;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<TensorBlob> tensors;

  const TensorBlob* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of model + optimizer state under the given metadata.
Checkpoint make_checkpoint(Model<float>& model, const OptimizerState<float>& state,
                           CheckpointMeta meta);

// Rebuilds the model and optimizer state; trainable tables are restored from
// the stored vocabulary and tensor.
std::pair<Model<float>, OptimizerState<float>> restore_model(
    const Checkpoint& checkpoint);

}  // namespace misent
