#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geocount/checkpoint.hpp"
#include "geocount/counts.hpp"
#include "geocount/net.hpp"
#include "geocount/optim.hpp"

namespace geocount {

struct TrainConfig {
  ModelConfig model;
  NadamHyper optimizer;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Write a checkpoint every N completed epochs (0 = only at the end).
  /// Consumed by the CLI; the core loop just exposes snapshots.
  int checkpoint_every = 0;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

/// Held-out likelihood report. mean_log_likelihood is the negation of
/// the mean over samples of sample_nll (itself a mean over categories).
struct EvalReport {
  double mean_log_likelihood = 0.0;
  Eigen::VectorXd per_category_mean_nll;
  long sample_count = 0;
};

struct EpochLoss {
  int epoch = 0;  // 1-based
  double mean_nll = 0.0;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<EpochLoss> history;
  NadamState optimizer;
};

/// Mini-batch NLL minimization with per-epoch seeded shuffling.
///
/// Batch order within epoch e is derived from (seed, e) alone, so a
/// resumed session replays the exact batches an uninterrupted run would
/// have seen. A trailing batch of size 1 is dropped (batch statistics
/// need two rows).
class TrainSession {
 public:
  TrainSession(TrainConfig config, std::vector<GeoSample> train_set);

  /// Rebuild a session from a checkpoint; train_set must be the same
  /// dataset (size is checked, contents are the caller's contract).
  static TrainSession resume(const CheckpointData& data,
                             std::vector<GeoSample> train_set);

  /// One pass over the data; returns the mean training NLL of the epoch.
  double run_epoch();

  /// One optimizer step on an explicit batch; returns the batch NLL.
  double step(const std::vector<int>& indices);

  long completed_epochs() const { return epoch_; }
  long completed_steps() const { return steps_; }
  const TrainConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }
  ModelWeights& weights() { return weights_; }
  const NadamState& optimizer() const { return optimizer_; }

  CheckpointData snapshot() const;

 private:
  TrainConfig config_;
  std::vector<GeoSample> data_;
  ModelWeights weights_;
  NadamState optimizer_;
  long epoch_ = 0;
  long steps_ = 0;
};

/// Run the full configured loop. Loss history holds one entry per epoch.
/// A non-finite loss aborts with NumericError naming the epoch and batch.
TrainResult train(const TrainConfig& config,
                  const std::vector<GeoSample>& train_set);

/// Infer-mode evaluation over the whole test set in one forward pass,
/// accumulating in test-set order with plain summation (so an external
/// loop over sample_nll reproduces the report exactly).
EvalReport evaluate(const ModelWeights& weights, const ModelConfig& config,
                    const std::vector<GeoSample>& test_set);

/// CSV with header "epoch,mean_nll", one row per epoch, %.17g floats.
void write_loss_csv(const std::vector<EpochLoss>& history,
                    const std::filesystem::path& path);

}  // namespace geocount
