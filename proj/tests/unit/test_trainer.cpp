#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "geocount/checkpoint.hpp"
#include "geocount/counts.hpp"
#include "geocount/dists.hpp"
#include "geocount/errors.hpp"
#include "geocount/rng.hpp"
#include "geocount/trainer.hpp"
#include "temp_dir.hpp"

using namespace geocount;

namespace {

GeoSample feature_sample(const std::string& id,
                         const std::vector<double>& features,
                         const std::vector<int>& counts) {
  GeoSample s;
  s.id = id;
  s.lat = 37.5;
  s.lon = -122.5;
  s.histogram.counts = counts;
  OverheadTile tile;
  tile.rows = 1;
  tile.cols = static_cast<int>(features.size());
  tile.channels = 1;
  tile.pixels = Eigen::Map<const Eigen::VectorXd>(features.data(),
                                                  static_cast<Eigen::Index>(features.size()));
  tile.bounds = {37.0, 38.0, -123.0, -122.0};
  s.tile = tile;
  return s;
}

ModelConfig feature_model(int dim, int hidden, int cats, Family family) {
  ModelConfig config;
  config.input_mode = InputMode::features;
  config.feature_dim = dim;
  config.hidden_width = hidden;
  config.category_count = cats;
  config.family = family;
  return config;
}

// Two-level dataset: dark tiles draw counts at low rates, bright tiles
// at high rates; the single feature is the brightness.
std::vector<GeoSample> two_level_dataset(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GeoSample> samples;
  for (int i = 0; i < n; ++i) {
    const bool bright = i % 2 == 1;
    const double rate = bright ? 8.0 : 1.0;
    samples.push_back(feature_sample(
        "s" + std::to_string(i), {bright ? 0.9 : 0.1},
        {static_cast<int>(rng.poisson(rate))}));
  }
  return samples;
}

bool weights_bit_equal(const ModelWeights& a, const ModelWeights& b) {
  const auto va = tensor_views(a);
  const auto vb = tensor_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].size != vb[i].size) return false;
    if (std::memcmp(va[i].data, vb[i].data, va[i].size * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("training is deterministic per seed") {
  auto data = two_level_dataset(24, 3);
  TrainConfig config;
  config.model = feature_model(1, 4, 1, Family::poisson);
  config.optimizer.learning_rate = 0.01;
  config.epochs = 3;
  config.batch_size = 8;
  config.seed = 42;

  const TrainResult a = train(config, data);
  const TrainResult b = train(config, data);
  REQUIRE(a.history.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.history[i].epoch == static_cast<int>(i) + 1);
    CHECK(a.history[i].mean_nll == b.history[i].mean_nll);
  }
  CHECK(weights_bit_equal(a.weights, b.weights));
}

TEST_CASE("training loss decreases over the first five epochs") {
  auto data = two_level_dataset(256, 11);
  TrainConfig config;
  config.model = feature_model(1, 8, 1, Family::poisson);
  config.optimizer.learning_rate = 5e-3;
  config.epochs = 6;
  config.batch_size = 32;
  config.seed = 7;
  const TrainResult result = train(config, data);
  for (int e = 1; e < 5; ++e)
    CHECK(result.history[static_cast<std::size_t>(e)].mean_nll <
          result.history[static_cast<std::size_t>(e - 1)].mean_nll);
}

TEST_CASE("poisson head on constant features recovers the sample-mean MLE") {
  Rng rng(19);
  const std::vector<double> rates = {0.8, 2.63, 5.1};
  std::vector<GeoSample> data;
  Eigen::VectorXd totals = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < 64; ++i) {
    std::vector<int> counts(3);
    for (int c = 0; c < 3; ++c) {
      counts[static_cast<std::size_t>(c)] =
          static_cast<int>(rng.poisson(rates[static_cast<std::size_t>(c)]));
      totals[c] += counts[static_cast<std::size_t>(c)];
    }
    data.push_back(feature_sample("s" + std::to_string(i), {0.7, 0.3}, counts));
  }
  const Eigen::VectorXd sample_mean = totals / 64.0;

  TrainConfig config;
  config.model = feature_model(2, 8, 3, Family::poisson);
  config.optimizer.learning_rate = 0.01;
  config.batch_size = 64;
  config.seed = 5;
  TrainSession session(config, data);
  std::vector<int> all(64);
  std::iota(all.begin(), all.end(), 0);
  for (int step = 0; step < 2000; ++step) session.step(all);

  const EvalReport report = evaluate(session.weights(), config.model, data);
  (void)report;
  const Eigen::MatrixXd batch = make_batch(config.model, data, {0});
  const ForwardResult fr = infer(session.weights(), config.model, batch);
  for (int c = 0; c < 3; ++c) {
    const double fitted = fr.params[0].a[c];
    CHECK(std::abs(fitted - sample_mean[c]) < 0.01 * sample_mean[c]);
  }
}

TEST_CASE("trained model beats the closed-form intercept model") {
  auto data = two_level_dataset(300, 23);
  const auto [train_set, test_set] = split_dataset(data, 0.25, 1);

  TrainConfig config;
  config.model = feature_model(1, 8, 1, Family::poisson);
  config.optimizer.learning_rate = 0.01;
  config.epochs = 60;
  config.batch_size = 32;
  config.seed = 3;
  const TrainResult result = train(config, train_set);
  const EvalReport model_report =
      evaluate(result.weights, config.model, test_set);

  // intercept oracle: the best constant rate is the train-set mean
  double mean = 0.0;
  for (const auto& s : train_set) mean += s.histogram.counts[0];
  mean /= static_cast<double>(train_set.size());
  double intercept_nll = 0.0;
  for (const auto& s : test_set)
    intercept_nll += dists::nll_poisson(mean, s.histogram.counts[0]).value;
  intercept_nll /= static_cast<double>(test_set.size());

  CHECK(model_report.mean_log_likelihood > -intercept_nll);
}

TEST_CASE("evaluate on all-zero weights and counts gives -ln 2") {
  const ModelConfig config = feature_model(2, 4, 3, Family::poisson);
  const ModelWeights weights = make_weights(config);
  std::vector<GeoSample> test_set;
  for (int i = 0; i < 5; ++i)
    test_set.push_back(
        feature_sample("t" + std::to_string(i), {0.1 * i, 0.5}, {0, 0, 0}));
  const EvalReport report = evaluate(weights, config, test_set);
  CHECK(report.mean_log_likelihood ==
        doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(report.sample_count == 5);

  const EvalReport again = evaluate(weights, config, test_set);
  CHECK(report.mean_log_likelihood == again.mean_log_likelihood);
  CHECK(report.per_category_mean_nll == again.per_category_mean_nll);
}

TEST_CASE("evaluate equals an external loop over sample_nll") {
  auto data = two_level_dataset(40, 31);
  TrainConfig config;
  config.model = feature_model(1, 4, 1, Family::gaussian);
  config.epochs = 2;
  config.batch_size = 8;
  config.seed = 13;
  const TrainResult result = train(config, data);

  const EvalReport report = evaluate(result.weights, config.model, data);

  std::vector<int> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Eigen::MatrixXd batch = make_batch(config.model, data, all);
  const ForwardResult fr = infer(result.weights, config.model, batch);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += dists::sample_nll(fr.params[i], data[i].histogram);
  CHECK(report.mean_log_likelihood ==
        -(total / static_cast<double>(data.size())));

  CHECK_THROWS_AS(evaluate(result.weights, config.model, {}), InputError);
}

TEST_CASE("checkpoint round-trip resumes bit-exactly") {
  auto data = two_level_dataset(30, 47);
  TrainConfig config;
  config.model = feature_model(1, 4, 2, Family::neg_binomial);
  // need a 2-category histogram for this config
  for (auto& s : data) s.histogram.counts = {s.histogram.counts[0], 1};
  config.optimizer.learning_rate = 1e-3;
  config.epochs = 3;
  config.batch_size = 8;
  config.seed = 17;

  testsupport::TempDir dir("ckpt");

  // interrupted run: 2 epochs, save, load, 1 more epoch
  TrainSession first(config, data);
  first.run_epoch();
  first.run_epoch();
  save_checkpoint(first.snapshot(), dir / "mid.gck");
  const CheckpointData loaded = load_checkpoint(dir / "mid.gck");
  TrainSession resumed = TrainSession::resume(loaded, data);
  CHECK(resumed.completed_epochs() == 2);
  const double resumed_loss = resumed.run_epoch();

  // uninterrupted run: 3 epochs straight
  TrainSession straight(config, data);
  straight.run_epoch();
  straight.run_epoch();
  const double straight_loss = straight.run_epoch();

  CHECK(resumed_loss == straight_loss);
  CHECK(weights_bit_equal(resumed.weights(), straight.weights()));
  CHECK(resumed.optimizer().m == straight.optimizer().m);
  CHECK(resumed.optimizer().v == straight.optimizer().v);
  CHECK(resumed.optimizer().t == straight.optimizer().t);
}

TEST_CASE("checkpoint stores the config echo verbatim") {
  auto data = two_level_dataset(10, 2);
  TrainConfig config;
  config.model = feature_model(1, 4, 1, Family::poisson);
  config.epochs = 1;
  config.batch_size = 4;
  config.seed = 29;
  TrainSession session(config, data);
  testsupport::TempDir dir("echo");
  save_checkpoint(session.snapshot(), dir / "w.gck");
  const CheckpointData loaded = load_checkpoint(dir / "w.gck");
  CHECK(loaded.config_json == train_config_to_json(config));
  CHECK(loaded.seed == 29);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto data = two_level_dataset(10, 3);
  TrainConfig config;
  config.model = feature_model(1, 4, 1, Family::poisson);
  config.epochs = 1;
  config.batch_size = 4;
  TrainSession session(config, data);
  testsupport::TempDir dir("corrupt");
  save_checkpoint(session.snapshot(), dir / "w.gck");

  std::ifstream in(dir / "w.gck", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  {  // truncation
    std::ofstream out(dir / "trunc.gck", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "trunc.gck"),
                       doctest::Contains("corrupt"), IoError);

  {  // flipped payload byte
    std::string flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    std::ofstream out(dir / "flip.gck", std::ios::binary);
    out.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "flip.gck"),
                       doctest::Contains("corrupt"), IoError);

  {  // future format version
    std::string wrong = bytes;
    wrong[7] = '9';  // GCKPT009
    std::ofstream out(dir / "ver.gck", std::ios::binary);
    out.write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "ver.gck"),
                       doctest::Contains("version"), IoError);

  CHECK_THROWS_AS(load_checkpoint(dir / "absent.gck"), IoError);
}

TEST_CASE("loss csv is stable across reruns") {
  std::vector<EpochLoss> history = {{1, 0.5}, {2, 0.25}, {3, 1.0 / 3.0}};
  testsupport::TempDir dir("csv");
  write_loss_csv(history, dir / "a.csv");
  write_loss_csv(history, dir / "b.csv");

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  const std::string a = slurp(dir / "a.csv");
  CHECK(a == slurp(dir / "b.csv"));
  CHECK(a.rfind("epoch,mean_nll\n", 0) == 0);
  CHECK(a.find("1,0.5\n") != std::string::npos);
}

TEST_CASE("non-finite loss aborts naming the epoch") {
  std::vector<GeoSample> data;
  for (int i = 0; i < 4; ++i)
    data.push_back(feature_sample("x" + std::to_string(i), {1e308}, {1}));
  TrainConfig config;
  config.model = feature_model(1, 4, 1, Family::poisson);
  config.epochs = 1;
  config.batch_size = 4;
  TrainSession session(config, data);
  CHECK_THROWS_WITH_AS(session.run_epoch(), doctest::Contains("epoch 1"),
                       NumericError);
}

TEST_CASE("config validation") {
  auto data = two_level_dataset(10, 1);
  TrainConfig config;
  config.model = feature_model(1, 4, 1, Family::poisson);
  config.batch_size = 1;
  CHECK_THROWS_AS(TrainSession(config, data), ConfigError);
  config.batch_size = 4;
  config.epochs = 0;
  CHECK_THROWS_AS(TrainSession(config, data), ConfigError);
  config.epochs = 1;
  CHECK_THROWS_AS(TrainSession(config, {}), InputError);
}

TEST_CASE("held-out ordering: poisson beats gaussian on poisson data") {
  SyntheticConfig synth;
  synth.category_count = 3;
  synth.sample_count = 700;
  synth.tile_rows = 2;
  synth.tile_cols = 2;
  synth.rates = {{0.4, 0.8}, {0.9, 0.5}, {0.3, 1.2}};
  synth.seed = 99;
  const auto samples = generate_synthetic(synth);
  const auto [train_set, test_set] = split_dataset(samples, 0.25, 4);

  double lls[2];
  int slot = 0;
  for (Family family : {Family::poisson, Family::gaussian}) {
    TrainConfig config;
    config.model.input_mode = InputMode::tile;
    config.model.tile_rows = 2;
    config.model.tile_cols = 2;
    config.model.hidden_width = 8;
    config.model.category_count = 3;
    config.model.family = family;
    config.optimizer.learning_rate = 5e-3;
    config.epochs = 12;
    config.batch_size = 32;
    config.seed = 21;
    const TrainResult result = train(config, train_set);
    lls[slot++] =
        evaluate(result.weights, config.model, test_set).mean_log_likelihood;
  }
  CHECK(lls[0] > lls[1]);
}

}  // TEST_SUITE
