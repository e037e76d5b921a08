#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "geocount/net.hpp"
#include "geocount/optim.hpp"

namespace geocount {

/// Everything needed to resume a training run bit-exactly.
struct CheckpointData {
  /// Verbatim echo of the run configuration (JSON text).
  std::string config_json;
  ModelConfig model;
  std::uint64_t seed = 0;
  long epoch = 0;  // completed epochs
  long step = 0;   // completed optimizer steps
  ModelWeights weights;
  NadamState optimizer;
};

/// Self-describing binary container, written atomically:
///
///   magic   "GCKPT001" (8 bytes; the trailing 001 is the format version)
///   u64 LE  header length H
///   H bytes header JSON: version, seed, epoch, step, model config,
///           optimizer hyperparameters and timestep, config echo,
///           tensor count
///   tensors (weights in tensor_views order, then optim.m, optim.v):
///           u32 LE name length, name bytes,
///           u32 LE ndim, u64 LE dims[ndim],
///           float64 LE row-major payload
///   u64 LE  FNV-1a 64 checksum of every byte after the magic
void save_checkpoint(const CheckpointData& data,
                     const std::filesystem::path& path);

/// Load and verify. Bad magic or version raises IoError("...version...");
/// truncation or checksum failure raises IoError("...corrupt...").
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace geocount
