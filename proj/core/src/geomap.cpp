#include "geocount/geomap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "geocount/dists.hpp"
#include "geocount/errors.hpp"
#include "geocount/image.hpp"
#include "geocount/rng.hpp"

namespace geocount {

void GridSpec::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("grid needs at least 1x1 cells");
  if (bounds.degenerate()) throw ConfigError("grid bounds are degenerate");
}

double GridSpec::cell_lat(int row) const {
  const double dlat = (bounds.lat_max - bounds.lat_min) / rows;
  return bounds.lat_max - (row + 0.5) * dlat;
}

double GridSpec::cell_lon(int col) const {
  const double dlon = (bounds.lon_max - bounds.lon_min) / cols;
  return bounds.lon_min + (col + 0.5) * dlon;
}

int GridSpec::cell_of(double lat, double lon) const {
  if (lat < bounds.lat_min || lat > bounds.lat_max || lon < bounds.lon_min ||
      lon > bounds.lon_max)
    return -1;
  const double dlat = (bounds.lat_max - bounds.lat_min) / rows;
  const double dlon = (bounds.lon_max - bounds.lon_min) / cols;
  int row = static_cast<int>(std::floor((bounds.lat_max - lat) / dlat));
  int col = static_cast<int>(std::floor((lon - bounds.lon_min) / dlon));
  row = std::clamp(row, 0, rows - 1);
  col = std::clamp(col, 0, cols - 1);
  return row * cols + col;
}

double equirect_distance_deg(double lat1, double lon1, double lat2,
                             double lon2) {
  const double mean_lat_rad =
      0.5 * (lat1 + lat2) * std::numbers::pi / 180.0;
  const double dlat = lat1 - lat2;
  const double dlon = (lon1 - lon2) * std::cos(mean_lat_rad);
  return std::hypot(dlat, dlon);
}

namespace {

RasterMap make_raster(const GridSpec& grid) {
  RasterMap map;
  map.grid = grid;
  map.values = Eigen::MatrixXd::Zero(grid.rows, grid.cols);
  map.no_data.assign(static_cast<std::size_t>(grid.cell_count()), 0);
  return map;
}

int checked_category(int category, int count) {
  if (category < 0 || category >= count)
    throw InputError("category index " + std::to_string(category) +
                     " outside [0, " + std::to_string(count) + ")");
  return category;
}

}  // namespace

RasterMap baseline_map(const std::vector<GeoSample>& samples, int category,
                       const GridSpec& grid, double bandwidth_deg) {
  grid.validate();
  if (!(bandwidth_deg > 0.0)) throw InputError("bandwidth must be positive");
  if (samples.empty()) throw InputError("baseline_map needs samples");
  for (const GeoSample& s : samples)
    checked_category(category, s.histogram.categories());

  RasterMap map = make_raster(grid);
  map.category_label = std::to_string(category);
  map.scaling = ScalingMode::min_max;
  const double cutoff = 5.0 * bandwidth_deg;
  const double denom = 2.0 * bandwidth_deg * bandwidth_deg;
  for (int row = 0; row < grid.rows; ++row) {
    const double clat = grid.cell_lat(row);
    for (int col = 0; col < grid.cols; ++col) {
      const double clon = grid.cell_lon(col);
      double weight_sum = 0.0;
      double value_sum = 0.0;
      double min_dist = std::numeric_limits<double>::infinity();
      for (const GeoSample& s : samples) {
        const double d = equirect_distance_deg(clat, clon, s.lat, s.lon);
        min_dist = std::min(min_dist, d);
        const double w = std::exp(-d * d / denom);
        weight_sum += w;
        value_sum +=
            w * s.histogram.counts[static_cast<std::size_t>(category)];
      }
      if (min_dist > cutoff) {
        map.no_data[static_cast<std::size_t>(row * grid.cols + col)] = 1;
      } else {
        map.values(row, col) = value_sum / weight_sum;
      }
    }
  }
  return map;
}

TileGrid assemble_tile_grid(const std::vector<GeoSample>& samples,
                            const GridSpec& grid) {
  grid.validate();
  TileGrid tiles;
  tiles.grid = grid;
  tiles.tiles.resize(static_cast<std::size_t>(grid.cell_count()));
  std::vector<double> best_dist(static_cast<std::size_t>(grid.cell_count()),
                                std::numeric_limits<double>::infinity());
  std::vector<std::string> best_id(static_cast<std::size_t>(grid.cell_count()));
  for (const GeoSample& s : samples) {
    if (!s.tile.has_value()) continue;
    const int cell = grid.cell_of(s.lat, s.lon);
    if (cell < 0) continue;
    const int row = cell / grid.cols;
    const int col = cell % grid.cols;
    const double d = equirect_distance_deg(grid.cell_lat(row),
                                           grid.cell_lon(col), s.lat, s.lon);
    const auto idx = static_cast<std::size_t>(cell);
    if (d < best_dist[idx] || (d == best_dist[idx] && s.id < best_id[idx])) {
      best_dist[idx] = d;
      best_id[idx] = s.id;
      tiles.tiles[idx] = s.tile;
    }
  }
  return tiles;
}

GridPredictions predict_grid_params(const ModelWeights& weights,
                                    const ModelConfig& config,
                                    const TileGrid& tiles, bool log_space) {
  tiles.grid.validate();
  if (tiles.tiles.size() != static_cast<std::size_t>(tiles.grid.cell_count()))
    throw ShapeError("tile grid size does not match its spec");
  GridPredictions out;
  out.grid = tiles.grid;
  std::vector<const OverheadTile*> present;
  for (std::size_t i = 0; i < tiles.tiles.size(); ++i) {
    if (tiles.tiles[i].has_value()) {
      out.cell_index.push_back(static_cast<int>(i));
      present.push_back(&*tiles.tiles[i]);
    }
  }
  if (present.empty()) throw InputError("tile grid has no tiles");
  const Eigen::MatrixXd batch = make_batch(config, present);
  const ForwardResult fr = infer(weights, config, batch);
  out.params.reserve(fr.params.size());
  for (const CountParams& p : fr.params) {
    Eigen::VectorXd expected = dists::expected_count(p);
    if (log_space) expected = expected.array().log().matrix();
    out.params.push_back(std::move(expected));
  }
  return out;
}

RasterMap model_heatmap(const ModelWeights& weights, const ModelConfig& config,
                        const TileGrid& tiles, int category) {
  checked_category(category, config.category_count);
  const GridPredictions predictions =
      predict_grid_params(weights, config, tiles, false);
  RasterMap map = make_raster(tiles.grid);
  map.category_label = std::to_string(category);
  map.scaling = ScalingMode::min_max;
  std::fill(map.no_data.begin(), map.no_data.end(), std::uint8_t{1});
  for (std::size_t i = 0; i < predictions.cell_index.size(); ++i) {
    const int cell = predictions.cell_index[i];
    map.values(cell / map.grid.cols, cell % map.grid.cols) =
        predictions.params[i][category];
    map.no_data[static_cast<std::size_t>(cell)] = 0;
  }
  const std::size_t missing =
      map.no_data.size() - predictions.cell_index.size();
  if (missing > 0)
    std::cerr << "warning: " << missing
              << " grid cells have no tile; marked as no-data\n";
  return map;
}

std::vector<RankedTile> top_k_tiles(const ModelWeights& weights,
                                    const ModelConfig& config,
                                    const std::vector<GeoSample>& samples,
                                    int category, int k) {
  checked_category(category, config.category_count);
  if (k < 1) throw InputError("k must be at least 1");
  if (static_cast<std::size_t>(k) > samples.size())
    throw InputError("k = " + std::to_string(k) + " exceeds the " +
                     std::to_string(samples.size()) + " available tiles");
  std::vector<int> indices(samples.size());
  std::iota(indices.begin(), indices.end(), 0);
  const Eigen::MatrixXd batch = make_batch(config, samples, indices);
  const ForwardResult fr = infer(weights, config, batch);

  std::vector<RankedTile> ranked(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    ranked[i] = {samples[i].id, dists::expected_count(fr.params[i])[category]};
  std::sort(ranked.begin(), ranked.end(),
            [](const RankedTile& a, const RankedTile& b) {
              if (a.expected != b.expected) return a.expected > b.expected;
              return a.id < b.id;
            });
  ranked.resize(static_cast<std::size_t>(k));
  return ranked;
}

namespace {

double squared_distance(const Eigen::RowVectorXd& a,
                        const Eigen::RowVectorXd& b) {
  return (a - b).squaredNorm();
}

struct LloydRun {
  Eigen::MatrixXd centroids;
  std::vector<int> assignments;
  double inertia = 0.0;
  std::vector<double> trace;
};

LloydRun run_lloyd(const Eigen::MatrixXd& points, int k, Rng rng) {
  const Eigen::Index n = points.rows();

  // k-means++ seeding
  Eigen::MatrixXd centroids(k, points.cols());
  std::vector<double> min_sq(static_cast<std::size_t>(n),
                             std::numeric_limits<double>::infinity());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(
      static_cast<std::uint64_t>(n))));
  for (int next = 1; next < k; ++next) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = squared_distance(points.row(i), centroids.row(next - 1));
      min_sq[static_cast<std::size_t>(i)] =
          std::min(min_sq[static_cast<std::size_t>(i)], d);
      total += min_sq[static_cast<std::size_t>(i)];
    }
    Eigen::Index chosen;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        cumulative += min_sq[static_cast<std::size_t>(i)];
        if (cumulative >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(next) = points.row(chosen);
  }

  LloydRun run;
  run.centroids = centroids;
  run.assignments.assign(static_cast<std::size_t>(n), -1);

  for (int iteration = 0; iteration < 300; ++iteration) {
    // assignment step (ties go to the lowest centroid index)
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(points.row(i), run.centroids.row(0));
      for (int c = 1; c < k; ++c) {
        const double d = squared_distance(points.row(i), run.centroids.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (run.assignments[static_cast<std::size_t>(i)] != best) {
        run.assignments[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
      inertia += best_d;
    }
    run.trace.push_back(inertia);
    run.inertia = inertia;
    if (!changed) break;

    // update step
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<long> members(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = run.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++members[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (members[static_cast<std::size_t>(c)] > 0) {
        run.centroids.row(c) =
            sums.row(c) / static_cast<double>(members[static_cast<std::size_t>(c)]);
      } else {
        // re-seed an emptied cluster from the farthest point
        Eigen::Index farthest = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = squared_distance(
              points.row(i),
              run.centroids.row(run.assignments[static_cast<std::size_t>(i)]));
          if (d > far_d) {
            far_d = d;
            farthest = i;
          }
        }
        run.centroids.row(c) = points.row(farthest);
      }
    }
  }
  return run;
}

}  // namespace

ClusterModel cluster_params(const std::vector<Eigen::VectorXd>& vectors, int k,
                            std::uint64_t seed, int restarts) {
  const std::size_t n = vectors.size();
  if (n == 0) throw InputError("cluster_params needs at least one vector");
  if (k < 1) throw InputError("k must be at least 1");
  if (static_cast<std::size_t>(k) > n)
    throw InputError("k = " + std::to_string(k) + " exceeds the " +
                     std::to_string(n) + " available vectors");
  if (restarts < 1) throw InputError("restarts must be at least 1");
  const Eigen::Index dim = vectors[0].size();
  Eigen::MatrixXd points(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (vectors[i].size() != dim)
      throw ShapeError("cluster vectors have inconsistent lengths");
    points.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
  }

  const Rng base(seed);
  std::optional<LloydRun> best;
  for (int r = 0; r < restarts; ++r) {
    LloydRun run = run_lloyd(points, k, base.split(static_cast<std::uint64_t>(r)));
    if (!best.has_value() || run.inertia < best->inertia) best = std::move(run);
  }

  ClusterModel model;
  model.centroids = best->centroids;
  model.assignments = best->assignments;
  model.inertia = best->inertia;
  model.seed = seed;
  model.inertia_trace = best->trace;
  return model;
}

RasterMap cluster_map(const GridPredictions& predictions,
                      const std::vector<int>& assignments) {
  if (assignments.size() != predictions.cell_index.size())
    throw ShapeError("assignments do not match the predicted cells");
  RasterMap map = make_raster(predictions.grid);
  map.category_label = "cluster";
  map.scaling = ScalingMode::none;
  std::fill(map.no_data.begin(), map.no_data.end(), std::uint8_t{1});
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const int cell = predictions.cell_index[i];
    map.values(cell / map.grid.cols, cell % map.grid.cols) = assignments[i];
    map.no_data[static_cast<std::size_t>(cell)] = 0;
  }
  return map;
}

namespace {

// 10 well-separated categorical colors; magenta is reserved for no-data.
constexpr std::uint8_t kCategorical[10][3] = {
    {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {250, 190, 212},
    {128, 128, 0},  {0, 0, 128}};
constexpr std::uint8_t kNoData[3] = {255, 0, 255};
constexpr double kGreenLow[3] = {240.0, 248.0, 240.0};
constexpr double kGreenHigh[3] = {0.0, 68.0, 0.0};

}  // namespace

std::string render_raster(const RasterMap& map, Palette palette) {
  map.grid.validate();
  if (map.values.rows() != map.grid.rows || map.values.cols() != map.grid.cols)
    throw ShapeError("raster value grid does not match its spec");
  if (map.no_data.size() != static_cast<std::size_t>(map.grid.cell_count()))
    throw ShapeError("raster no-data mask does not match its spec");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (int row = 0; row < map.grid.rows; ++row) {
    for (int col = 0; col < map.grid.cols; ++col) {
      if (map.missing(row, col)) continue;
      const double v = map.values(row, col);
      if (!std::isfinite(v))
        throw NumericError("raster contains a non-finite value at cell (" +
                           std::to_string(row) + "," + std::to_string(col) +
                           ")");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }

  ImageU8 image;
  image.rows = map.grid.rows;
  image.cols = map.grid.cols;
  image.channels = 3;
  image.data.resize(static_cast<std::size_t>(image.rows) * image.cols * 3);
  for (int row = 0; row < map.grid.rows; ++row) {
    for (int col = 0; col < map.grid.cols; ++col) {
      std::uint8_t rgb[3];
      if (map.missing(row, col)) {
        rgb[0] = kNoData[0];
        rgb[1] = kNoData[1];
        rgb[2] = kNoData[2];
      } else if (palette == Palette::categorical) {
        const long id = std::lround(map.values(row, col));
        const auto& c = kCategorical[((id % 10) + 10) % 10];
        rgb[0] = c[0];
        rgb[1] = c[1];
        rgb[2] = c[2];
      } else {
        const double t =
            hi > lo ? (map.values(row, col) - lo) / (hi - lo) : 0.0;
        for (int ch = 0; ch < 3; ++ch)
          rgb[ch] = static_cast<std::uint8_t>(std::lround(
              kGreenLow[ch] + t * (kGreenHigh[ch] - kGreenLow[ch])));
      }
      for (int ch = 0; ch < 3; ++ch) image.at(row, col, ch) = rgb[ch];
    }
  }
  return encode_pnm(image);
}

void save_raster_sidecar(const RasterMap& map,
                         const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["lat_min"] = map.grid.bounds.lat_min;
  doc["lat_max"] = map.grid.bounds.lat_max;
  doc["lon_min"] = map.grid.bounds.lon_min;
  doc["lon_max"] = map.grid.bounds.lon_max;
  doc["rows"] = map.grid.rows;
  doc["cols"] = map.grid.cols;
  doc["category"] = map.category_label;
  doc["scaling"] = map.scaling == ScalingMode::min_max ? "min_max" : "none";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("short write: " + path.string());
}

void save_cluster_model(const ClusterModel& model,
                        const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["k"] = model.centroids.rows();
  doc["inertia"] = model.inertia;
  doc["seed"] = model.seed;
  nlohmann::ordered_json centroids = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < model.centroids.rows(); ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < model.centroids.cols(); ++c)
      row.push_back(model.centroids(r, c));
    centroids.push_back(row);
  }
  doc["centroids"] = centroids;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace geocount
