#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "geocount/counts.hpp"
#include "geocount/errors.hpp"
#include "geocount/image.hpp"
#include "geocount/rng.hpp"
#include "temp_dir.hpp"

using namespace geocount;

namespace {

std::vector<GeoSample> tiny_dataset() {
  std::vector<GeoSample> samples;
  for (int i = 0; i < 3; ++i) {
    GeoSample s;
    s.id = "s" + std::to_string(i);
    s.lat = 37.0 + 0.1 * i;
    s.lon = -122.0 - 0.1 * i;
    s.histogram.counts = {i, 0, 2 * i};
    s.tile_ref = "tiles/s" + std::to_string(i) + ".pgm";
    samples.push_back(s);
  }
  return samples;
}

// Zero-truncated Poisson mean by brute-force summation.
double truncated_poisson_mean(double rate) {
  double pmf = std::exp(-rate);
  double tail = 0.0;
  double weighted = 0.0;
  for (long k = 1; k <= 400; ++k) {
    pmf *= rate / static_cast<double>(k);
    tail += pmf;
    weighted += static_cast<double>(k) * pmf;
  }
  return weighted / tail;
}

}  // namespace

TEST_SUITE("counts") {

TEST_CASE("build_histogram tallies strictly above the threshold") {
  const std::vector<Detection> dets = {{0, 0.9}, {0, 0.4}, {2, 0.6}};
  const ObjectHistogram hist = build_histogram(dets, 0.5, 3);
  CHECK(hist.counts == std::vector<int>{1, 0, 1});

  CHECK(build_histogram({}, 0.5, 3).counts == std::vector<int>{0, 0, 0});

  // a detection exactly at the threshold is excluded
  CHECK(build_histogram({{1, 0.5}}, 0.5, 3).counts ==
        std::vector<int>{0, 0, 0});

  std::vector<Detection> many(78, {7, 0.99});
  const ObjectHistogram wide = build_histogram(many, 0.5, 91);
  CHECK(wide.counts[7] == 78);
  CHECK(wide.total() == 78);
}

TEST_CASE("build_histogram rejects bad input") {
  CHECK_THROWS_WITH_AS(build_histogram({{3, 0.9}}, 0.5, 3),
                       doctest::Contains("category_id 3"), InputError);
  CHECK_THROWS_AS(build_histogram({{0, 1.5}}, 0.5, 3), InputError);
  CHECK_THROWS_AS(build_histogram({{0, 0.9}}, 1.5, 3), InputError);
}

TEST_CASE("build_histogram is permutation invariant and conserves totals") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Detection> dets;
    const int n = 5 + static_cast<int>(rng.below(40));
    long above = 0;
    for (int i = 0; i < n; ++i) {
      Detection d{static_cast<int>(rng.below(6)), rng.uniform()};
      if (d.score > 0.5) ++above;
      dets.push_back(d);
    }
    const ObjectHistogram first = build_histogram(dets, 0.5, 6);
    CHECK(first.total() == above);
    rng.shuffle(dets);
    CHECK(build_histogram(dets, 0.5, 6) == first);
  }
}

TEST_CASE("jsonl round-trip is the identity on records") {
  testsupport::TempDir dir("jsonl");
  const auto samples = tiny_dataset();
  save_dataset(samples, dir / "d.jsonl", DatasetFormat::jsonl);
  const auto back = load_dataset(dir / "d.jsonl", DatasetFormat::jsonl);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(same_record(samples[i], back[i]));
}

TEST_CASE("single jsonl line with zero counts") {
  testsupport::TempDir dir("jsonl1");
  {
    std::ofstream out(dir / "one.jsonl");
    out << R"({"id":"a","lat":1.0,"lon":2.0,"counts":[0,0,0],"tile":""})"
        << "\n";
  }
  const auto samples = load_dataset(dir / "one.jsonl", DatasetFormat::jsonl);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].histogram.total() == 0);
  CHECK(samples[0].id == "a");
}

TEST_CASE("csv fixture parses to known counts") {
  testsupport::TempDir dir("csv");
  {
    std::ofstream out(dir / "d.csv");
    out << "id,lat,lon,tile,c0,c1,c2\n"
           "alpha,37.5,-122.5,tiles/a.pgm,1,2,3\n"
           "beta,36.25,-121,tiles/b.pgm,0,0,7\n"
           "gamma,40,-120,,5,0,0\n";
  }
  const auto samples = load_dataset(dir / "d.csv", DatasetFormat::csv);
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].histogram.counts == std::vector<int>{1, 2, 3});
  CHECK(samples[1].histogram.counts == std::vector<int>{0, 0, 7});
  CHECK(samples[2].histogram.counts == std::vector<int>{5, 0, 0});
  CHECK(samples[1].lat == 36.25);
  CHECK(samples[2].tile_ref.empty());

  save_dataset(samples, dir / "d2.csv", DatasetFormat::csv);
  const auto back = load_dataset(dir / "d2.csv", DatasetFormat::csv);
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(same_record(samples[i], back[i]));
}

TEST_CASE("malformed records report line numbers") {
  testsupport::TempDir dir("bad");
  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"id":"a","lat":0,"lon":0,"counts":[0,0],"tile":""})" << "\n";
    out << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir / "bad.jsonl", DatasetFormat::jsonl),
                       doctest::Contains("line 2"), InputError);
  {
    std::ofstream out(dir / "len.jsonl");
    out << R"({"id":"a","lat":0,"lon":0,"counts":[0,0],"tile":""})" << "\n";
    out << R"({"id":"b","lat":0,"lon":0,"counts":[0,0,0],"tile":""})" << "\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir / "len.jsonl", DatasetFormat::jsonl),
                       doctest::Contains("line 2"), InputError);
  {
    std::ofstream out(dir / "bad.csv");
    out << "id,lat,lon,tile,c0\n"
           "a,0,0,,x\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir / "bad.csv", DatasetFormat::csv),
                       doctest::Contains("line 2"), InputError);
  {
    std::ofstream out(dir / "hdr.csv");
    out << "id,lat,lon,c0\na,0,0,1\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "hdr.csv", DatasetFormat::csv),
                  InputError);
  CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl", DatasetFormat::jsonl),
                  IoError);
}

TEST_CASE("split_dataset partitions deterministically") {
  std::vector<GeoSample> samples(100);
  for (int i = 0; i < 100; ++i) samples[static_cast<std::size_t>(i)].id = "s" + std::to_string(i);

  const auto [train, test] = split_dataset(samples, 0.25, 7);
  CHECK(train.size() == 75);
  CHECK(test.size() == 25);

  std::set<std::string> seen;
  for (const auto& s : train) seen.insert(s.id);
  for (const auto& s : test) {
    CHECK(seen.count(s.id) == 0);  // disjoint
    seen.insert(s.id);
  }
  CHECK(seen.size() == 100);  // union restores the input

  const auto [train2, test2] = split_dataset(samples, 0.25, 7);
  REQUIRE(train2.size() == train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    CHECK(train[i].id == train2[i].id);
}

TEST_CASE("split_dataset rounds half up and keeps the union intact") {
  std::vector<GeoSample> four(4);
  for (int i = 0; i < 4; ++i) four[static_cast<std::size_t>(i)].id = std::to_string(i);
  const auto [train, test] = split_dataset(four, 0.25, 0);
  CHECK(train.size() == 3);
  CHECK(test.size() == 1);

  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL, 12345ULL}) {
    const auto [tr, te] = split_dataset(four, 0.5, seed);
    std::multiset<std::string> ids;
    for (const auto& s : tr) ids.insert(s.id);
    for (const auto& s : te) ids.insert(s.id);
    CHECK(ids == std::multiset<std::string>{"0", "1", "2", "3"});
  }

  CHECK_THROWS_AS(split_dataset(four, 0.0, 0), InputError);
  CHECK_THROWS_AS(split_dataset(four, 1.0, 0), InputError);
  std::vector<GeoSample> one(1);
  CHECK_THROWS_AS(split_dataset(one, 0.5, 0), InputError);
}

TEST_CASE("generate_synthetic honors a zero rate function") {
  SyntheticConfig config;
  config.category_count = 3;
  config.sample_count = 500;
  config.tile_rows = 4;
  config.tile_cols = 4;
  config.rates = {{0.0, 0.0}, {2.0, 1.0}, {1.0, -0.5}};
  config.seed = 5;
  const auto samples = generate_synthetic(config);
  REQUIRE(samples.size() == 500);
  for (const auto& s : samples) {
    CHECK(s.histogram.counts[0] == 0);
    CHECK(s.true_rates[0] == 1e-12);
    CHECK(s.tile.has_value());
    CHECK(s.true_rates.size() == 3);
  }
}

TEST_CASE("generate_synthetic matches the paper-scale mean rate") {
  SyntheticConfig config;
  config.category_count = 1;
  config.sample_count = 10000;
  config.tile_rows = 2;
  config.tile_cols = 2;
  config.rates = {{2.63, 0.0}};
  config.pixel_noise = 0.0;
  config.seed = 41;
  const auto samples = generate_synthetic(config);
  double mean = 0.0;
  for (const auto& s : samples) mean += s.histogram.counts[0];
  mean /= static_cast<double>(samples.size());
  // 3 sigma of the mean of 10k Poisson(2.63) draws is ~0.049
  CHECK(mean > 2.55);
  CHECK(mean < 2.71);
}

TEST_CASE("generate_synthetic is deterministic per seed") {
  SyntheticConfig config;
  config.category_count = 4;
  config.sample_count = 50;
  config.seed = 9;
  const auto a = generate_synthetic(config);
  const auto b = generate_synthetic(config);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(same_record(a[i], b[i]));
    CHECK(a[i].true_rates == b[i].true_rates);
    CHECK(a[i].tile->pixels == b[i].tile->pixels);
  }
}

TEST_CASE("generate_synthetic empirical means converge to configured rates") {
  SyntheticConfig config;
  config.category_count = 3;
  config.sample_count = 20000;
  config.tile_rows = 2;
  config.tile_cols = 2;
  config.pixel_noise = 0.0;
  config.rates = {{1.7, 0.0}, {0.4, 0.0}, {6.0, 0.0}};
  config.seed = 77;
  const auto samples = generate_synthetic(config);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.histogram.counts[static_cast<std::size_t>(c)];
    mean /= static_cast<double>(samples.size());
    const double rate = config.rates[static_cast<std::size_t>(c)].base;
    const double bound = 3.0 * std::sqrt(rate / static_cast<double>(samples.size()));
    CHECK(std::abs(mean - rate) < bound);
  }
}

TEST_CASE("grid layout produces one sample per cell with a rate gradient") {
  SyntheticConfig config;
  config.category_count = 1;
  config.sample_count = 36;
  config.layout = SyntheticLayout::grid;
  config.grid_rows = 6;
  config.grid_cols = 6;
  config.seed = 3;
  const auto samples = generate_synthetic(config);
  REQUIRE(samples.size() == 36);
  // all cell centers distinct, inside bounds
  std::set<std::pair<double, double>> locations;
  for (const auto& s : samples) {
    locations.insert({s.lat, s.lon});
    CHECK(s.lat > config.bounds.lat_min);
    CHECK(s.lat < config.bounds.lat_max);
    CHECK(s.lon > config.bounds.lon_min);
    CHECK(s.lon < config.bounds.lon_max);
  }
  CHECK(locations.size() == 36);
  // intensity (and with the default gain the true rate) grows along the
  // diagonal from the north-west corner
  CHECK(samples[0].true_rates[0] < samples[35].true_rates[0]);
}

TEST_CASE("dataset_stats summarizes totals") {
  std::vector<GeoSample> samples(3);
  samples[0].histogram.counts = {0, 0};
  samples[1].histogram.counts = {1, 1};
  samples[2].histogram.counts = {4, 0};
  const DatasetStats stats = dataset_stats(samples);
  CHECK(stats.sample_count == 3);
  REQUIRE(stats.mean_nonzero_total.has_value());
  CHECK(*stats.mean_nonzero_total == doctest::Approx(3.0));
  CHECK(stats.max_total == 4);
  CHECK(stats.per_category_total == std::vector<long>{5, 1});
  CHECK(stats.total_histogram.at(0) == 1);
  CHECK(stats.total_histogram.at(2) == 1);
  CHECK(stats.total_histogram.at(4) == 1);

  std::vector<GeoSample> zeros(2);
  zeros[0].histogram.counts = {0};
  zeros[1].histogram.counts = {0};
  CHECK_FALSE(dataset_stats(zeros).mean_nonzero_total.has_value());

  CHECK_THROWS_AS(dataset_stats({}), InputError);
}

TEST_CASE("zero truncation raises the mean above the rate") {
  SyntheticConfig config;
  config.category_count = 1;
  config.sample_count = 20000;
  config.tile_rows = 2;
  config.tile_cols = 2;
  config.pixel_noise = 0.0;
  config.rates = {{2.63, 0.0}};
  config.seed = 123;
  const auto samples = generate_synthetic(config);
  const DatasetStats stats = dataset_stats(samples);
  REQUIRE(stats.mean_nonzero_total.has_value());
  CHECK(*stats.mean_nonzero_total > 2.63);
  // brute-force zero-truncated mean: lambda / (1 - e^-lambda) = 2.8343
  const double expected = truncated_poisson_mean(2.63);
  CHECK(std::abs(*stats.mean_nonzero_total - expected) < 0.05);
}

TEST_CASE("resolve_tiles reads file and inline base64 references") {
  testsupport::TempDir dir("tiles");
  std::filesystem::create_directories(dir / "tiles");

  OverheadTile tile;
  tile.rows = 2;
  tile.cols = 2;
  tile.channels = 1;
  tile.pixels.resize(4);
  tile.pixels << 0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0;
  tile.bounds = {10.0, 11.0, 20.0, 21.0};
  const std::string payload =
      encode_pnm(tile_to_image(tile), bounds_comment(tile.bounds));
  write_pnm(tile_to_image(tile), dir / "tiles" / "a.pgm",
            bounds_comment(tile.bounds));

  std::vector<GeoSample> samples(2);
  samples[0].id = "file";
  samples[0].lat = 10.5;
  samples[0].lon = 20.5;
  samples[0].histogram.counts = {0};
  samples[0].tile_ref = "tiles/a.pgm";
  samples[1].id = "inline";
  samples[1].lat = 0.0;
  samples[1].lon = 0.0;
  samples[1].histogram.counts = {0};
  samples[1].tile_ref = "base64:" + base64_encode(payload);

  resolve_tiles(samples, dir.path());
  for (const auto& s : samples) {
    REQUIRE(s.tile.has_value());
    CHECK(s.tile->pixels == tile.pixels);
    CHECK(s.tile->bounds == tile.bounds);  // from the header comment
  }

  std::vector<GeoSample> missing(1);
  missing[0].id = "x";
  CHECK_THROWS_AS(resolve_tiles(missing, dir.path()), StateError);
  missing[0].tile_ref = "tiles/nope.pgm";
  CHECK_THROWS_AS(resolve_tiles(missing, dir.path()), IoError);
}

TEST_CASE("tile validation") {
  OverheadTile tile;
  tile.rows = 0;
  CHECK_THROWS_AS(validate_tile(tile), ShapeError);
  tile.rows = 1;
  tile.cols = 1;
  tile.channels = 1;
  tile.pixels = Eigen::VectorXd::Constant(1, 2.0);
  tile.bounds = {0, 1, 0, 1};
  CHECK_THROWS_AS(validate_tile(tile), InputError);
  tile.pixels[0] = 0.5;
  CHECK_NOTHROW(validate_tile(tile));
  tile.bounds = {1, 1, 0, 1};
  CHECK_THROWS_AS(validate_tile(tile), InputError);
}

TEST_CASE("true-rate sidecar round-trips") {
  testsupport::TempDir dir("rates");
  SyntheticConfig config;
  config.category_count = 2;
  config.sample_count = 5;
  config.seed = 1;
  auto samples = generate_synthetic(config);
  save_true_rates(samples, dir / "rates.json");

  auto stripped = samples;
  for (auto& s : stripped) s.true_rates.clear();
  load_true_rates(stripped, dir / "rates.json");
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(stripped[i].true_rates == samples[i].true_rates);
}

}  // TEST_SUITE
