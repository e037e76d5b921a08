#include "geocount/net.hpp"

#include <cmath>

#include "geocount/errors.hpp"
#include "geocount/rng.hpp"

namespace geocount {

namespace {

struct ConvDims {
  int in_rows, in_cols, in_channels;
  int out_rows, out_cols, filters;
};

// Valid (no padding) convolution output dims per layer.
std::vector<ConvDims> conv_chain(const ModelConfig& config) {
  std::vector<ConvDims> chain;
  int rows = config.tile_rows;
  int cols = config.tile_cols;
  int channels = config.tile_channels;
  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    const ConvSpec& spec = config.conv[i];
    if (spec.filters < 1 || spec.kernel < 1 || spec.stride < 1)
      throw ConfigError("conv layer " + std::to_string(i) +
                        ": filters, kernel and stride must be positive");
    if (spec.kernel > rows || spec.kernel > cols)
      throw ConfigError("conv layer " + std::to_string(i) +
                        ": kernel exceeds input size");
    ConvDims dims;
    dims.in_rows = rows;
    dims.in_cols = cols;
    dims.in_channels = channels;
    dims.filters = spec.filters;
    dims.out_rows = (rows - spec.kernel) / spec.stride + 1;
    dims.out_cols = (cols - spec.kernel) / spec.stride + 1;
    chain.push_back(dims);
    rows = dims.out_rows;
    cols = dims.out_cols;
    channels = spec.filters;
  }
  return chain;
}

}  // namespace

int ModelConfig::input_dim() const {
  if (input_mode == InputMode::features) return feature_dim;
  return tile_channels * tile_rows * tile_cols;
}

int ModelConfig::extractor_dim() const {
  if (input_mode == InputMode::features) return feature_dim;
  if (conv.empty()) return input_dim();
  const auto chain = conv_chain(*this);
  const ConvDims& last = chain.back();
  return last.filters * last.out_rows * last.out_cols;
}

void ModelConfig::validate() const {
  if (hidden_width < 1) throw ConfigError("hidden_width must be at least 1");
  if (category_count < 1) throw ConfigError("category_count must be at least 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw ConfigError("leaky_slope must be in (0,1)");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0))
    throw ConfigError("bn_momentum must be in (0,1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("bn_epsilon must be positive");
  if (input_mode == InputMode::features) {
    if (feature_dim < 1) throw ConfigError("feature_dim must be at least 1");
    if (!conv.empty())
      throw ConfigError("conv extractor is not applicable in features mode");
  } else {
    if (tile_rows < 1 || tile_cols < 1 || tile_channels < 1)
      throw ConfigError("tile dimensions must be at least 1");
    conv_chain(*this);  // validates the chain
  }
}

ModelWeights make_weights(const ModelConfig& config) {
  config.validate();
  ModelWeights w;
  if (config.input_mode == InputMode::tile) {
    const auto chain = conv_chain(config);
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const ConvSpec& spec = config.conv[i];
      ConvLayer layer;
      layer.in_channels = chain[i].in_channels;
      layer.kernel_size = spec.kernel;
      layer.stride = spec.stride;
      layer.kernel = Eigen::MatrixXd::Zero(
          spec.filters, chain[i].in_channels * spec.kernel * spec.kernel);
      layer.bias = Eigen::VectorXd::Zero(spec.filters);
      w.conv.push_back(std::move(layer));
    }
  }
  const int d0 = config.extractor_dim();
  const int h = config.hidden_width;
  const int cats = config.category_count;
  w.dense1.weight = Eigen::MatrixXd::Zero(h, d0);
  w.dense1.bias = Eigen::VectorXd::Zero(h);
  w.bn1 = {Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h),
           Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h)};
  w.dense2.weight = Eigen::MatrixXd::Zero(h, h);
  w.dense2.bias = Eigen::VectorXd::Zero(h);
  w.bn2 = {Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h),
           Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h)};
  w.head_a.weight = Eigen::MatrixXd::Zero(cats, h);
  w.head_a.bias = Eigen::VectorXd::Zero(cats);
  if (param_count(config.family) == 2) {
    w.head_b.weight = Eigen::MatrixXd::Zero(cats, h);
    w.head_b.bias = Eigen::VectorXd::Zero(cats);
  }
  return w;
}

namespace {

template <class View, class Weights>
std::vector<View> enumerate_tensors(Weights& w) {
  std::vector<View> views;
  auto add = [&views](const std::string& name, auto& tensor, bool trainable) {
    views.push_back(View{name, tensor.data(),
                         static_cast<std::size_t>(tensor.size()), tensor.rows(),
                         tensor.cols(), trainable});
  };
  for (std::size_t i = 0; i < w.conv.size(); ++i) {
    const std::string prefix = "conv" + std::to_string(i);
    add(prefix + ".kernel", w.conv[i].kernel, true);
    add(prefix + ".bias", w.conv[i].bias, true);
  }
  add("dense1.weight", w.dense1.weight, true);
  add("dense1.bias", w.dense1.bias, true);
  add("bn1.gamma", w.bn1.gamma, true);
  add("bn1.beta", w.bn1.beta, true);
  add("bn1.running_mean", w.bn1.running_mean, false);
  add("bn1.running_var", w.bn1.running_var, false);
  add("dense2.weight", w.dense2.weight, true);
  add("dense2.bias", w.dense2.bias, true);
  add("bn2.gamma", w.bn2.gamma, true);
  add("bn2.beta", w.bn2.beta, true);
  add("bn2.running_mean", w.bn2.running_mean, false);
  add("bn2.running_var", w.bn2.running_var, false);
  add("head_a.weight", w.head_a.weight, true);
  add("head_a.bias", w.head_a.bias, true);
  if (w.head_b.weight.size() > 0) {
    add("head_b.weight", w.head_b.weight, true);
    add("head_b.bias", w.head_b.bias, true);
  }
  return views;
}

}  // namespace

std::vector<TensorView> tensor_views(ModelWeights& weights) {
  return enumerate_tensors<TensorView>(weights);
}

std::vector<ConstTensorView> tensor_views(const ModelWeights& weights) {
  return enumerate_tensors<ConstTensorView>(weights);
}

std::size_t trainable_size(const ModelWeights& weights) {
  std::size_t total = 0;
  for (const auto& view : tensor_views(weights))
    if (view.trainable) total += view.size;
  return total;
}

Eigen::VectorXd flatten_trainable(const ModelWeights& weights) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(trainable_size(weights)));
  Eigen::Index offset = 0;
  for (const auto& view : tensor_views(weights)) {
    if (!view.trainable) continue;
    for (std::size_t i = 0; i < view.size; ++i) flat[offset++] = view.data[i];
  }
  return flat;
}

void set_trainable(ModelWeights& weights, const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(trainable_size(weights)))
    throw ShapeError("flat parameter vector has wrong length");
  Eigen::Index offset = 0;
  for (auto& view : tensor_views(weights)) {
    if (!view.trainable) continue;
    for (std::size_t i = 0; i < view.size; ++i) view.data[i] = flat[offset++];
  }
}

ModelWeights zeros_like(const ModelWeights& weights) {
  ModelWeights zero = weights;
  for (auto& view : tensor_views(zero))
    std::fill(view.data, view.data + view.size, 0.0);
  return zero;
}

namespace {

void glorot_fill(Eigen::MatrixXd& weight, double fan_in, double fan_out,
                 Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  // row-major fill so the draw stream does not depend on Eigen's layout
  for (Eigen::Index r = 0; r < weight.rows(); ++r)
    for (Eigen::Index c = 0; c < weight.cols(); ++c)
      weight(r, c) = rng.uniform(-bound, bound);
}

}  // namespace

ModelWeights glorot_init(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights w = make_weights(config);
  Rng rng(seed);
  for (auto& layer : w.conv) {
    const double fan_in = static_cast<double>(layer.kernel.cols());
    const double fan_out = static_cast<double>(layer.kernel.rows()) *
                           layer.kernel_size * layer.kernel_size;
    glorot_fill(layer.kernel, fan_in, fan_out, rng);
  }
  glorot_fill(w.dense1.weight, static_cast<double>(w.dense1.weight.cols()),
              static_cast<double>(w.dense1.weight.rows()), rng);
  glorot_fill(w.dense2.weight, static_cast<double>(w.dense2.weight.cols()),
              static_cast<double>(w.dense2.weight.rows()), rng);
  glorot_fill(w.head_a.weight, static_cast<double>(w.head_a.weight.cols()),
              static_cast<double>(w.head_a.weight.rows()), rng);
  if (w.head_b.weight.size() > 0)
    glorot_fill(w.head_b.weight, static_cast<double>(w.head_b.weight.cols()),
                static_cast<double>(w.head_b.weight.rows()), rng);
  w.bn1.gamma.setOnes();
  w.bn1.running_var.setOnes();
  w.bn2.gamma.setOnes();
  w.bn2.running_var.setOnes();
  return w;
}

double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

namespace {

Eigen::MatrixXd leaky_relu_matrix(const Eigen::MatrixXd& x, double slope) {
  return x.unaryExpr([slope](double v) { return leaky_relu(v, slope); });
}

// d/dx leaky_relu at the pre-activation x.
Eigen::MatrixXd leaky_relu_mask(const Eigen::MatrixXd& x, double slope) {
  return x.unaryExpr([slope](double v) { return v >= 0.0 ? 1.0 : slope; });
}

// Gather conv patches of one planar sample into positions x (in_ch*k*k).
// Position order is row-major over the output grid; within a patch the
// entries are ordered (channel, ky, kx).
Eigen::MatrixXd im2col(const Eigen::RowVectorXd& x, const ConvDims& dims,
                       int kernel, int stride) {
  const int positions = dims.out_rows * dims.out_cols;
  Eigen::MatrixXd patches(positions, dims.in_channels * kernel * kernel);
  for (int oy = 0; oy < dims.out_rows; ++oy) {
    for (int ox = 0; ox < dims.out_cols; ++ox) {
      const int pos = oy * dims.out_cols + ox;
      int col = 0;
      for (int ci = 0; ci < dims.in_channels; ++ci)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx)
            patches(pos, col++) =
                x[(static_cast<Eigen::Index>(ci) * dims.in_rows + oy * stride +
                   ky) *
                      dims.in_cols +
                  ox * stride + kx];
    }
  }
  return patches;
}

// Scatter-add of patch gradients back onto one planar input row.
Eigen::RowVectorXd col2im(const Eigen::MatrixXd& dpatches, const ConvDims& dims,
                          int kernel, int stride) {
  Eigen::RowVectorXd dx = Eigen::RowVectorXd::Zero(
      static_cast<Eigen::Index>(dims.in_channels) * dims.in_rows * dims.in_cols);
  for (int oy = 0; oy < dims.out_rows; ++oy) {
    for (int ox = 0; ox < dims.out_cols; ++ox) {
      const int pos = oy * dims.out_cols + ox;
      int col = 0;
      for (int ci = 0; ci < dims.in_channels; ++ci)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx)
            dx[(static_cast<Eigen::Index>(ci) * dims.in_rows + oy * stride + ky) *
                   dims.in_cols +
               ox * stride + kx] += dpatches(pos, col++);
    }
  }
  return dx;
}

Eigen::MatrixXd dense_forward(const Eigen::MatrixXd& x,
                              const DenseLayer& layer) {
  return (x * layer.weight.transpose()).rowwise() + layer.bias.transpose();
}

}  // namespace

Eigen::MatrixXd batch_norm_forward_train(const Eigen::MatrixXd& z,
                                         const Eigen::VectorXd& gamma,
                                         const Eigen::VectorXd& beta,
                                         double epsilon,
                                         BatchNormCache& cache) {
  const Eigen::Index n = z.rows();
  if (n < 2) throw InputError("batch norm needs at least 2 rows in train mode");
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const Eigen::MatrixXd centered = z.rowwise() - mean;
  const Eigen::RowVectorXd var =
      centered.array().square().matrix().colwise().sum() /
      static_cast<double>(n);
  const Eigen::RowVectorXd inv_std =
      (var.array() + epsilon).sqrt().inverse().matrix();
  cache.mean = mean.transpose();
  cache.var = var.transpose();
  cache.x_hat = (centered.array().rowwise() * inv_std.array()).matrix();
  Eigen::MatrixXd y =
      (cache.x_hat.array().rowwise() * gamma.transpose().array()).matrix();
  y.rowwise() += beta.transpose();
  return y;
}

Eigen::MatrixXd batch_norm_forward_infer(const Eigen::MatrixXd& z,
                                         const BatchNormLayer& layer,
                                         double epsilon) {
  const Eigen::RowVectorXd inv_std =
      (layer.running_var.transpose().array() + epsilon).sqrt().inverse().matrix();
  const Eigen::MatrixXd x_hat =
      ((z.rowwise() - layer.running_mean.transpose()).array().rowwise() *
       inv_std.array())
          .matrix();
  Eigen::MatrixXd y =
      (x_hat.array().rowwise() * layer.gamma.transpose().array()).matrix();
  y.rowwise() += layer.beta.transpose();
  return y;
}

Eigen::MatrixXd batch_norm_backward(const Eigen::MatrixXd& dy,
                                    const BatchNormCache& cache,
                                    const Eigen::VectorXd& gamma,
                                    double epsilon, Eigen::VectorXd& dgamma,
                                    Eigen::VectorXd& dbeta) {
  const double n = static_cast<double>(dy.rows());
  dbeta = dy.colwise().sum().transpose();
  dgamma = (dy.array() * cache.x_hat.array())
               .matrix()
               .colwise()
               .sum()
               .transpose();
  const Eigen::RowVectorXd inv_std =
      (cache.var.transpose().array() + epsilon).sqrt().inverse().matrix();
  const Eigen::MatrixXd dxhat =
      (dy.array().rowwise() * gamma.transpose().array()).matrix();
  const Eigen::RowVectorXd mean_dxhat = dxhat.colwise().sum() / n;
  const Eigen::RowVectorXd mean_dxhat_xhat =
      (dxhat.array() * cache.x_hat.array()).matrix().colwise().sum() / n;
  Eigen::MatrixXd dz = dxhat.rowwise() - mean_dxhat;
  dz -= (cache.x_hat.array().rowwise() * mean_dxhat_xhat.array()).matrix();
  dz = (dz.array().rowwise() * inv_std.array()).matrix();
  return dz;
}

namespace {

void check_batch(const ModelConfig& config, const Eigen::MatrixXd& batch) {
  if (batch.rows() < 1) throw ShapeError("empty batch");
  if (batch.cols() != config.input_dim())
    throw ShapeError("batch has " + std::to_string(batch.cols()) +
                     " columns, expected " +
                     std::to_string(config.input_dim()));
}

}  // namespace

ForwardResult forward(ModelWeights& weights, const ModelConfig& config,
                      const Eigen::MatrixXd& batch, Mode mode) {
  config.validate();
  check_batch(config, batch);
  const bool train = mode == Mode::train;
  if (train && batch.rows() < 2)
    throw InputError(
        "train-mode forward needs batch size >= 2 (batch statistics are "
        "undefined)");

  ForwardResult result;
  auto cache = train ? std::make_shared<ForwardCache>() : nullptr;
  if (cache) {
    cache->input = batch;
    cache->batch_size = static_cast<int>(batch.rows());
  }

  // extractor
  Eigen::MatrixXd features;
  if (config.input_mode == InputMode::tile && !config.conv.empty()) {
    const auto chain = conv_chain(config);
    const Eigen::Index n = batch.rows();
    Eigen::MatrixXd current = batch;
    for (std::size_t l = 0; l < chain.size(); ++l) {
      const ConvDims& dims = chain[l];
      const ConvLayer& layer = weights.conv[l];
      const int positions = dims.out_rows * dims.out_cols;
      Eigen::MatrixXd next(n,
                           static_cast<Eigen::Index>(dims.filters) * positions);
      ConvCache conv_cache;
      conv_cache.in_rows = dims.in_rows;
      conv_cache.in_cols = dims.in_cols;
      conv_cache.in_channels = dims.in_channels;
      conv_cache.out_rows = dims.out_rows;
      conv_cache.out_cols = dims.out_cols;
      for (Eigen::Index s = 0; s < n; ++s) {
        const Eigen::RowVectorXd row = current.row(s);
        Eigen::MatrixXd patches = im2col(row, dims, layer.kernel_size,
                                         layer.stride);
        Eigen::MatrixXd preact = (patches * layer.kernel.transpose()).rowwise() +
                                 layer.bias.transpose();
        const Eigen::MatrixXd act = leaky_relu_matrix(preact, config.leaky_slope);
        // planar layout (filter, oy, ox)
        for (int f = 0; f < dims.filters; ++f)
          for (int pos = 0; pos < positions; ++pos)
            next(s, static_cast<Eigen::Index>(f) * positions + pos) =
                act(pos, f);
        if (cache) {
          conv_cache.patches.push_back(std::move(patches));
          conv_cache.preact.push_back(std::move(preact));
        }
      }
      if (cache) cache->conv.push_back(std::move(conv_cache));
      current = std::move(next);
    }
    features = std::move(current);
  } else {
    features = batch;
  }
  if (cache) cache->features = features;

  // hidden stack
  const Eigen::MatrixXd z1 = dense_forward(features, weights.dense1);
  Eigen::MatrixXd y1;
  BatchNormCache bn1_cache;
  if (train) {
    y1 = batch_norm_forward_train(z1, weights.bn1.gamma, weights.bn1.beta,
                                  config.bn_epsilon, bn1_cache);
    weights.bn1.running_mean = config.bn_momentum * weights.bn1.running_mean +
                               (1.0 - config.bn_momentum) * bn1_cache.mean;
    weights.bn1.running_var = config.bn_momentum * weights.bn1.running_var +
                              (1.0 - config.bn_momentum) * bn1_cache.var;
  } else {
    y1 = batch_norm_forward_infer(z1, weights.bn1, config.bn_epsilon);
  }
  const Eigen::MatrixXd a1 = leaky_relu_matrix(y1, config.leaky_slope);

  const Eigen::MatrixXd z2 = dense_forward(a1, weights.dense2);
  Eigen::MatrixXd y2;
  BatchNormCache bn2_cache;
  if (train) {
    y2 = batch_norm_forward_train(z2, weights.bn2.gamma, weights.bn2.beta,
                                  config.bn_epsilon, bn2_cache);
    weights.bn2.running_mean = config.bn_momentum * weights.bn2.running_mean +
                               (1.0 - config.bn_momentum) * bn2_cache.mean;
    weights.bn2.running_var = config.bn_momentum * weights.bn2.running_var +
                              (1.0 - config.bn_momentum) * bn2_cache.var;
  } else {
    y2 = batch_norm_forward_infer(z2, weights.bn2, config.bn_epsilon);
  }
  const Eigen::MatrixXd a2 = leaky_relu_matrix(y2, config.leaky_slope);

  // heads
  result.raw_a = dense_forward(a2, weights.head_a);
  if (param_count(config.family) == 2)
    result.raw_b = dense_forward(a2, weights.head_b);

  const Eigen::Index n = batch.rows();
  result.params.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::VectorXd raw_a_row = result.raw_a.row(s).transpose();
    const Eigen::VectorXd raw_b_row =
        result.raw_b.size() > 0
            ? Eigen::VectorXd(result.raw_b.row(s).transpose())
            : Eigen::VectorXd();
    result.params.push_back(
        dists::link_params(config.family, raw_a_row, raw_b_row));
  }

  if (cache) {
    cache->z1 = z1;
    cache->bn1 = std::move(bn1_cache);
    cache->y1 = y1;
    cache->a1 = a1;
    cache->z2 = z2;
    cache->bn2 = std::move(bn2_cache);
    cache->y2 = y2;
    cache->a2 = a2;
    result.cache = std::move(cache);
  }
  return result;
}

ForwardResult infer(const ModelWeights& weights, const ModelConfig& config,
                    const Eigen::MatrixXd& batch) {
  // infer mode never writes to the weights
  return forward(const_cast<ModelWeights&>(weights), config, batch,
                 Mode::infer);
}

ModelWeights backward(const ModelWeights& weights, const ModelConfig& config,
                      const ForwardCache& cache,
                      const Eigen::MatrixXd& grad_raw_a,
                      const Eigen::MatrixXd& grad_raw_b) {
  config.validate();
  if (cache.batch_size < 2)
    throw StateError("backward needs the cache of a train-mode forward");
  const Eigen::Index n = cache.batch_size;
  if (grad_raw_a.rows() != n || grad_raw_a.cols() != config.category_count)
    throw ShapeError("grad_raw_a shape mismatch");
  const bool two_heads = param_count(config.family) == 2;
  if (two_heads &&
      (grad_raw_b.rows() != n || grad_raw_b.cols() != config.category_count))
    throw ShapeError("grad_raw_b shape mismatch");

  ModelWeights grads = zeros_like(weights);

  // heads
  grads.head_a.weight = grad_raw_a.transpose() * cache.a2;
  grads.head_a.bias = grad_raw_a.colwise().sum().transpose();
  Eigen::MatrixXd da2 = grad_raw_a * weights.head_a.weight;
  if (two_heads) {
    grads.head_b.weight = grad_raw_b.transpose() * cache.a2;
    grads.head_b.bias = grad_raw_b.colwise().sum().transpose();
    da2 += grad_raw_b * weights.head_b.weight;
  }

  // second hidden block
  const Eigen::MatrixXd dy2 =
      (da2.array() * leaky_relu_mask(cache.y2, config.leaky_slope).array())
          .matrix();
  const Eigen::MatrixXd dz2 =
      batch_norm_backward(dy2, cache.bn2, weights.bn2.gamma, config.bn_epsilon,
                          grads.bn2.gamma, grads.bn2.beta);
  grads.dense2.weight = dz2.transpose() * cache.a1;
  grads.dense2.bias = dz2.colwise().sum().transpose();
  const Eigen::MatrixXd da1 = dz2 * weights.dense2.weight;

  // first hidden block
  const Eigen::MatrixXd dy1 =
      (da1.array() * leaky_relu_mask(cache.y1, config.leaky_slope).array())
          .matrix();
  const Eigen::MatrixXd dz1 =
      batch_norm_backward(dy1, cache.bn1, weights.bn1.gamma, config.bn_epsilon,
                          grads.bn1.gamma, grads.bn1.beta);
  grads.dense1.weight = dz1.transpose() * cache.features;
  grads.dense1.bias = dz1.colwise().sum().transpose();

  // conv extractor
  if (!cache.conv.empty()) {
    Eigen::MatrixXd dcurrent = dz1 * weights.dense1.weight;  // d features
    const auto chain = conv_chain(config);
    for (std::size_t l = chain.size(); l-- > 0;) {
      const ConvDims& dims = chain[l];
      const ConvLayer& layer = weights.conv[l];
      const ConvCache& conv_cache = cache.conv[l];
      const int positions = dims.out_rows * dims.out_cols;
      Eigen::MatrixXd dprev(n, static_cast<Eigen::Index>(dims.in_channels) *
                                   dims.in_rows * dims.in_cols);
      for (Eigen::Index s = 0; s < n; ++s) {
        Eigen::MatrixXd dact(positions, dims.filters);
        for (int f = 0; f < dims.filters; ++f)
          for (int pos = 0; pos < positions; ++pos)
            dact(pos, f) =
                dcurrent(s, static_cast<Eigen::Index>(f) * positions + pos);
        const Eigen::MatrixXd dz =
            (dact.array() *
             leaky_relu_mask(conv_cache.preact[static_cast<std::size_t>(s)],
                             config.leaky_slope)
                 .array())
                .matrix();
        grads.conv[l].kernel +=
            dz.transpose() * conv_cache.patches[static_cast<std::size_t>(s)];
        grads.conv[l].bias += dz.colwise().sum().transpose();
        const Eigen::MatrixXd dpatches = dz * layer.kernel;
        dprev.row(s) = col2im(dpatches, dims, layer.kernel_size, layer.stride);
      }
      if (l > 0) dcurrent = std::move(dprev);
    }
  }

  return grads;
}

Eigen::MatrixXd make_batch(const ModelConfig& config,
                           const std::vector<GeoSample>& samples,
                           const std::vector<int>& indices) {
  std::vector<const OverheadTile*> tiles;
  tiles.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= samples.size())
      throw InputError("batch index out of range");
    const GeoSample& sample = samples[static_cast<std::size_t>(idx)];
    if (!sample.tile.has_value())
      throw StateError("sample '" + sample.id +
                       "' has no resolved tile; call resolve_tiles first");
    tiles.push_back(&*sample.tile);
  }
  return make_batch(config, tiles);
}

Eigen::MatrixXd make_batch(const ModelConfig& config,
                           const std::vector<const OverheadTile*>& tiles) {
  const int width = config.input_dim();
  Eigen::MatrixXd batch(static_cast<Eigen::Index>(tiles.size()), width);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const OverheadTile& tile = *tiles[i];
    if (config.input_mode == InputMode::tile) {
      if (tile.rows != config.tile_rows || tile.cols != config.tile_cols ||
          tile.channels != config.tile_channels)
        throw ShapeError("tile shape " + std::to_string(tile.rows) + "x" +
                         std::to_string(tile.cols) + "x" +
                         std::to_string(tile.channels) +
                         " does not match the model config");
    } else if (tile.pixel_count() != width) {
      throw ShapeError("feature vector length " +
                       std::to_string(tile.pixel_count()) +
                       " does not match feature_dim " + std::to_string(width));
    }
    batch.row(static_cast<Eigen::Index>(i)) = tile.pixels.transpose();
  }
  return batch;
}

}  // namespace geocount
