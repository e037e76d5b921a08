#include "geocount/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "config_json.hpp"
#include "geocount/dists.hpp"
#include "geocount/errors.hpp"
#include "geocount/rng.hpp"

namespace geocount {

std::string train_config_to_json(const TrainConfig& config) {
  return detail::train_config_to_json_obj(config).dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad train config json: " + std::string(e.what()));
  }
  return detail::train_config_from_json_obj(doc);
}

TrainSession::TrainSession(TrainConfig config, std::vector<GeoSample> train_set)
    : config_(std::move(config)), data_(std::move(train_set)) {
  config_.model.validate();
  if (config_.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (config_.batch_size < 2)
    throw ConfigError("batch_size must be at least 2 (batch statistics)");
  if (data_.size() < 2) throw InputError("training needs at least 2 samples");
  weights_ = glorot_init(config_.model, config_.seed);
  optimizer_ = init_state(weights_, config_.optimizer);
}

TrainSession TrainSession::resume(const CheckpointData& data,
                                  std::vector<GeoSample> train_set) {
  TrainConfig config = train_config_from_json(data.config_json);
  config.model = data.model;  // the stored shapes are authoritative
  TrainSession session(std::move(config), std::move(train_set));
  session.weights_ = data.weights;
  session.optimizer_ = data.optimizer;
  session.epoch_ = data.epoch;
  session.steps_ = data.step;
  return session;
}

double TrainSession::step(const std::vector<int>& indices) {
  if (indices.size() < 2)
    throw InputError("a training step needs at least 2 samples");
  const Eigen::MatrixXd batch = make_batch(config_.model, data_, indices);
  ForwardResult fr = forward(weights_, config_.model, batch, Mode::train);

  const Family family = config_.model.family;
  const bool two_heads = param_count(family) == 2;
  const Eigen::Index n = batch.rows();
  const int cats = config_.model.category_count;
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::MatrixXd grad_raw_a = Eigen::MatrixXd::Zero(n, cats);
  Eigen::MatrixXd grad_raw_b;
  if (two_heads) grad_raw_b = Eigen::MatrixXd::Zero(n, cats);

  double loss_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const GeoSample& sample = data_[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    if (sample.histogram.categories() != cats)
      throw ShapeError("sample '" + sample.id +
                       "' histogram does not match category_count");
    const Eigen::VectorXd raw_a = fr.raw_a.row(i).transpose();
    const Eigen::VectorXd raw_b =
        two_heads ? Eigen::VectorXd(fr.raw_b.row(i).transpose())
                  : Eigen::VectorXd();
    const dists::RawNllGrad grad =
        dists::sample_nll_raw_grad(family, raw_a, raw_b, sample.histogram);
    loss_sum += grad.value;
    grad_raw_a.row(i) = grad.grad_raw_a.transpose() * inv_n;
    if (two_heads) grad_raw_b.row(i) = grad.grad_raw_b.transpose() * inv_n;
  }
  const double loss = loss_sum * inv_n;
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");

  const ModelWeights grads =
      backward(weights_, config_.model, *fr.cache, grad_raw_a, grad_raw_b);
  nadam_step(optimizer_, weights_, grads);
  steps_ += 1;
  return loss;
}

double TrainSession::run_epoch() {
  const std::size_t n = data_.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // batch order depends only on (seed, epoch index)
  Rng rng = Rng(config_.seed).split(static_cast<std::uint64_t>(epoch_) + 1);
  rng.shuffle(order);

  const std::size_t batch_size = static_cast<std::size_t>(config_.batch_size);
  double weighted_sum = 0.0;
  std::size_t counted = 0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;  // batch statistics need two rows
    const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    double loss;
    try {
      loss = step(batch);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch_ + 1) + " batch " +
                         std::to_string(batch_index) + ": " + e.what());
    }
    weighted_sum += loss * static_cast<double>(end - start);
    counted += end - start;
  }
  epoch_ += 1;
  return weighted_sum / static_cast<double>(counted);
}

CheckpointData TrainSession::snapshot() const {
  CheckpointData data;
  data.config_json = train_config_to_json(config_);
  data.model = config_.model;
  data.seed = config_.seed;
  data.epoch = epoch_;
  data.step = steps_;
  data.weights = weights_;
  data.optimizer = optimizer_;
  return data;
}

TrainResult train(const TrainConfig& config,
                  const std::vector<GeoSample>& train_set) {
  TrainSession session(config, train_set);
  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(config.epochs));
  for (int e = 0; e < config.epochs; ++e)
    result.history.push_back({e + 1, session.run_epoch()});
  result.weights = session.weights();
  result.optimizer = session.optimizer();
  return result;
}

EvalReport evaluate(const ModelWeights& weights, const ModelConfig& config,
                    const std::vector<GeoSample>& test_set) {
  if (test_set.empty()) throw InputError("evaluate needs a non-empty test set");
  std::vector<int> indices(test_set.size());
  std::iota(indices.begin(), indices.end(), 0);
  const Eigen::MatrixXd batch = make_batch(config, test_set, indices);
  const ForwardResult fr = infer(weights, config, batch);

  const int cats = config.category_count;
  const Family family = config.family;
  Eigen::VectorXd per_category = Eigen::VectorXd::Zero(cats);
  double total = 0.0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const ObjectHistogram& hist = test_set[i].histogram;
    const CountParams& params = fr.params[i];
    total += dists::sample_nll(params, hist);
    for (int c = 0; c < cats; ++c) {
      const double b = params.b.size() > 0 ? params.b[c] : 0.0;
      per_category[c] +=
          dists::nll(family, params.a[c], b, hist.counts[static_cast<std::size_t>(c)])
              .value;
    }
  }
  const double n = static_cast<double>(test_set.size());
  EvalReport report;
  report.mean_log_likelihood = -(total / n);
  report.per_category_mean_nll = per_category / n;
  report.sample_count = static_cast<long>(test_set.size());
  return report;
}

void write_loss_csv(const std::vector<EpochLoss>& history,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "epoch,mean_nll\n";
  char buf[64];
  for (const EpochLoss& row : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g\n", row.epoch, row.mean_nll);
    out << buf;
  }
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace geocount
