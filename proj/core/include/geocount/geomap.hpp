#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geocount/counts.hpp"
#include "geocount/net.hpp"

namespace geocount {

/// Equirectangular grid over a geographic rectangle. Row 0 is the
/// northern edge; cells are indexed row-major.
struct GridSpec {
  GeoBounds bounds;
  int rows = 1;
  int cols = 1;

  double cell_lat(int row) const;
  double cell_lon(int col) const;
  /// Row-major index of the cell containing (lat, lon), or -1.
  int cell_of(double lat, double lon) const;
  int cell_count() const { return rows * cols; }
  void validate() const;
};

/// Planar distance in degrees: sqrt(dlat^2 + (dlon cos(mean lat))^2),
/// the equirectangular approximation (adequate at city scale).
double equirect_distance_deg(double lat1, double lon1, double lat2,
                             double lon2);

enum class ScalingMode { none, min_max };

/// Geo-referenced grid of scalar values. no_data entries are excluded
/// from scaling and rendered in the sentinel color; values there are 0.
struct RasterMap {
  GridSpec grid;
  Eigen::MatrixXd values;            // rows x cols
  std::vector<std::uint8_t> no_data;  // row-major, 1 = missing
  std::string category_label;
  ScalingMode scaling = ScalingMode::none;

  bool missing(int row, int col) const {
    return no_data[static_cast<std::size_t>(row * grid.cols + col)] != 0;
  }
};

/// Kernel-smoothed average of one category's counts. Cell value is
/// sum_i w(d_i) count_i / sum_i w(d_i) with w(d) = exp(-d^2 / (2 bw^2))
/// over the equirectangular distance from the cell center to sample i.
/// Cells farther than 5 bandwidths from every sample are no-data.
RasterMap baseline_map(const std::vector<GeoSample>& samples, int category,
                       const GridSpec& grid, double bandwidth_deg);

/// One optional tile per grid cell, row-major.
struct TileGrid {
  GridSpec grid;
  std::vector<std::optional<OverheadTile>> tiles;
};

/// Place each sample's resolved tile into the cell containing its
/// location. When several samples land in one cell the one nearest the
/// cell center wins (ties by ascending id).
TileGrid assemble_tile_grid(const std::vector<GeoSample>& samples,
                            const GridSpec& grid);

/// Expected-count surface for one category: cell value =
/// expected_count(forward(tile))[category]. Raw values are preserved;
/// min-max scaling is recorded for render time. Missing tiles become
/// no-data cells.
RasterMap model_heatmap(const ModelWeights& weights, const ModelConfig& config,
                        const TileGrid& tiles, int category);

struct RankedTile {
  std::string id;
  double expected = 0.0;
};

/// Top-k samples by predicted expected count for one category,
/// descending; ties broken by ascending id.
std::vector<RankedTile> top_k_tiles(const ModelWeights& weights,
                                    const ModelConfig& config,
                                    const std::vector<GeoSample>& samples,
                                    int category, int k);

/// Expected-count vectors (length C) for every cell that has a tile,
/// optionally log-transformed. cell_index maps entries back to cells.
struct GridPredictions {
  GridSpec grid;
  std::vector<int> cell_index;
  std::vector<Eigen::VectorXd> params;
};
GridPredictions predict_grid_params(const ModelWeights& weights,
                                    const ModelConfig& config,
                                    const TileGrid& tiles, bool log_space);

struct ClusterModel {
  Eigen::MatrixXd centroids;  // k x dim
  std::vector<int> assignments;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  /// Inertia recorded at each Lloyd assignment step of the winning run.
  std::vector<double> inertia_trace;
};

/// k-means with k-means++ seeding and `restarts` independent runs (best
/// inertia wins). Lloyd iterations stop when assignments are stable or
/// after 300 rounds; an emptied cluster is re-seeded from the point
/// farthest from its assigned centroid.
ClusterModel cluster_params(const std::vector<Eigen::VectorXd>& vectors, int k,
                            std::uint64_t seed, int restarts = 8);

/// Cluster-id raster over the predicted cells (no-data elsewhere).
RasterMap cluster_map(const GridPredictions& predictions,
                      const std::vector<int>& assignments);

enum class Palette { green_scale, categorical };

/// Binary PPM (P6, maxval 255) bytes. green_scale maps min-max to a
/// light-to-dark-green ramp; categorical uses a fixed 10-color palette
/// indexed by cluster id mod 10. No-data cells render magenta.
std::string render_raster(const RasterMap& map, Palette palette);

/// Sidecar metadata (bounds, rows, cols, category, scaling) as JSON.
void save_raster_sidecar(const RasterMap& map,
                         const std::filesystem::path& path);

/// Cluster model export: centroids, k, inertia, seed.
void save_cluster_model(const ClusterModel& model,
                        const std::filesystem::path& path);

}  // namespace geocount
