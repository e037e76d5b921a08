#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "geocount/counts.hpp"
#include "geocount/dists.hpp"

namespace geocount {

struct ConvSpec {
  int filters = 4;
  int kernel = 3;
  int stride = 1;
};

enum class InputMode {
  tile,      // raw tile pixels, optional conv extractor, then flatten
  features   // precomputed feature vector, fed to the dense stack directly
};

struct ModelConfig {
  InputMode input_mode = InputMode::tile;
  int tile_rows = 8;
  int tile_cols = 8;
  int tile_channels = 1;
  int feature_dim = 0;  // features mode only
  std::vector<ConvSpec> conv;
  int hidden_width = 64;
  int category_count = 91;
  Family family = Family::poisson;
  double leaky_slope = 0.01;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;

  /// Flattened width of one input row fed to forward().
  int input_dim() const;
  /// Width after the conv extractor (== input_dim in features mode).
  int extractor_dim() const;
  void validate() const;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct BatchNormLayer {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
};

struct ConvLayer {
  Eigen::MatrixXd kernel;  // filters x (in_channels * k * k)
  Eigen::VectorXd bias;
  int in_channels = 0;
  int kernel_size = 0;
  int stride = 1;
};

/// All trainable tensors plus the batch-norm running statistics.
/// Gradients reuse this shape (running stats stay zero there).
struct ModelWeights {
  std::vector<ConvLayer> conv;
  DenseLayer dense1;
  BatchNormLayer bn1;
  DenseLayer dense2;
  BatchNormLayer bn2;
  DenseLayer head_a;
  DenseLayer head_b;  // empty for Poisson
};

/// data points at the Eigen buffer (column-major for matrices);
/// rows/cols describe the logical shape (cols == 1 for vectors).
struct TensorView {
  std::string name;
  double* data;
  std::size_t size;
  Eigen::Index rows;
  Eigen::Index cols;
  bool trainable;
};
struct ConstTensorView {
  std::string name;
  const double* data;
  std::size_t size;
  Eigen::Index rows;
  Eigen::Index cols;
  bool trainable;
};

/// Fixed-order enumeration of every tensor; the order defines the flat
/// parameter layout and the checkpoint layout.
std::vector<TensorView> tensor_views(ModelWeights& weights);
std::vector<ConstTensorView> tensor_views(const ModelWeights& weights);

std::size_t trainable_size(const ModelWeights& weights);
Eigen::VectorXd flatten_trainable(const ModelWeights& weights);
void set_trainable(ModelWeights& weights, const Eigen::VectorXd& flat);
ModelWeights zeros_like(const ModelWeights& weights);

/// Allocate zero weights of the configured shapes (gamma zero as well;
/// glorot_init sets the conventional gamma=1, running_var=1).
ModelWeights make_weights(const ModelConfig& config);

/// Glorot-uniform weights: each weight matrix ~ U[-a, a] with
/// a = sqrt(6 / (fan_in + fan_out)); biases 0; gamma 1, beta 0;
/// running mean 0, running variance 1. Deterministic per seed.
ModelWeights glorot_init(const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, infer };

double leaky_relu(double x, double slope);

struct BatchNormCache {
  Eigen::MatrixXd x_hat;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // biased
};

/// Normalize each column of z over the batch (biased variance), then
/// scale/shift by gamma/beta. Requires at least 2 rows.
Eigen::MatrixXd batch_norm_forward_train(const Eigen::MatrixXd& z,
                                         const Eigen::VectorXd& gamma,
                                         const Eigen::VectorXd& beta,
                                         double epsilon, BatchNormCache& cache);

Eigen::MatrixXd batch_norm_forward_infer(const Eigen::MatrixXd& z,
                                         const BatchNormLayer& layer,
                                         double epsilon);

/// Exact gradient through the batch statistics.
Eigen::MatrixXd batch_norm_backward(const Eigen::MatrixXd& dy,
                                    const BatchNormCache& cache,
                                    const Eigen::VectorXd& gamma,
                                    double epsilon, Eigen::VectorXd& dgamma,
                                    Eigen::VectorXd& dbeta);

struct ConvCache {
  std::vector<Eigen::MatrixXd> patches;  // per sample: positions x (in_ch*k*k)
  std::vector<Eigen::MatrixXd> preact;   // per sample: positions x filters
  int in_rows = 0, in_cols = 0, in_channels = 0;
  int out_rows = 0, out_cols = 0;
};

struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<ConvCache> conv;
  Eigen::MatrixXd features;  // extractor output, batch x extractor_dim
  Eigen::MatrixXd z1;        // dense1 pre-norm
  BatchNormCache bn1;
  Eigen::MatrixXd y1;  // post-norm pre-activation
  Eigen::MatrixXd a1;
  Eigen::MatrixXd z2;
  BatchNormCache bn2;
  Eigen::MatrixXd y2;
  Eigen::MatrixXd a2;
  int batch_size = 0;
};

struct ForwardResult {
  Eigen::MatrixXd raw_a;  // batch x C, pre-link
  Eigen::MatrixXd raw_b;  // batch x C, empty for Poisson
  std::vector<CountParams> params;
  std::shared_ptr<ForwardCache> cache;  // train mode only
};

/// Run the pipeline [conv -> leaky-relu]* -> flatten -> dense -> bn ->
/// leaky-relu -> dense -> bn -> leaky-relu -> heads -> softplus link.
///
/// batch is row-per-sample, each row planar (channel, row, col) in tile
/// mode or the feature vector in features mode. Train mode uses batch
/// statistics, updates the running statistics in place, and fills the
/// cache; it requires batch size >= 2. Infer mode never mutates weights.
ForwardResult forward(ModelWeights& weights, const ModelConfig& config,
                      const Eigen::MatrixXd& batch, Mode mode);

/// Pure inference entry point.
ForwardResult infer(const ModelWeights& weights, const ModelConfig& config,
                    const Eigen::MatrixXd& batch);

/// Exact gradients of a scalar loss with respect to every trainable
/// tensor, given d loss / d raw head outputs. grad_raw_b is ignored for
/// Poisson heads.
ModelWeights backward(const ModelWeights& weights, const ModelConfig& config,
                      const ForwardCache& cache,
                      const Eigen::MatrixXd& grad_raw_a,
                      const Eigen::MatrixXd& grad_raw_b);

/// Assemble the forward() input matrix from resolved samples.
/// indices selects and orders the rows.
Eigen::MatrixXd make_batch(const ModelConfig& config,
                           const std::vector<GeoSample>& samples,
                           const std::vector<int>& indices);
Eigen::MatrixXd make_batch(const ModelConfig& config,
                           const std::vector<const OverheadTile*>& tiles);

}  // namespace geocount
