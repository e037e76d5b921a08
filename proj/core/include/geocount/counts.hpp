#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geocount/image.hpp"

namespace geocount {

/// One detector output record: a category index and a confidence score.
struct Detection {
  int category_id = 0;
  double score = 0.0;
};

/// Per-category tally of object instances in one ground-level observation.
struct ObjectHistogram {
  std::vector<int> counts;

  int categories() const { return static_cast<int>(counts.size()); }
  long total() const;

  bool operator==(const ObjectHistogram&) const = default;
};

struct GeoBounds {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  bool degenerate() const { return lat_min >= lat_max || lon_min >= lon_max; }
  bool operator==(const GeoBounds&) const = default;
};

/// Overhead image chip. Pixels are reals in [0,1], stored planar:
/// index (c * rows + y) * cols + x.
struct OverheadTile {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  Eigen::VectorXd pixels;
  GeoBounds bounds;

  double at(int c, int y, int x) const {
    return pixels[(static_cast<Eigen::Index>(c) * rows + y) * cols + x];
  }
  double& at(int c, int y, int x) {
    return pixels[(static_cast<Eigen::Index>(c) * rows + y) * cols + x];
  }
  Eigen::Index pixel_count() const {
    return static_cast<Eigen::Index>(rows) * cols * channels;
  }
  double mean_intensity() const {
    return pixel_count() > 0 ? pixels.mean() : 0.0;
  }
};

/// Throws if the tile violates its invariants (dims, pixel range, bounds).
void validate_tile(const OverheadTile& tile);

/// Quantize tile pixels to 8-bit for PGM/PPM storage (round(v * 255)).
ImageU8 tile_to_image(const OverheadTile& tile);
OverheadTile image_to_tile(const ImageU8& image, const GeoBounds& bounds);

/// PNM header comment carrying geographic bounds:
/// "bounds <lat_min> <lat_max> <lon_min> <lon_max>".
std::string bounds_comment(const GeoBounds& bounds);

/// Geotagged pairing of an object histogram with an overhead tile.
///
/// tile_ref is the serialized reference: a path relative to the dataset
/// file, or "base64:<data>" holding an inline PGM/PPM payload. tile is
/// the resolved pixel data (present after generation or resolve_tiles).
/// true_rates carries the synthetic generator's ground truth when known.
struct GeoSample {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  ObjectHistogram histogram;
  std::string tile_ref;
  std::optional<OverheadTile> tile;
  std::vector<double> true_rates;
};

/// Equality on the serialized fields (id, lat, lon, counts, tile_ref).
bool same_record(const GeoSample& a, const GeoSample& b);

/// Tally detections with score strictly above the threshold into a
/// length-C histogram. A detection with category_id outside [0, C)
/// raises InputError naming the offending record.
ObjectHistogram build_histogram(const std::vector<Detection>& detections,
                                double threshold, int category_count);

enum class DatasetFormat { jsonl, csv };

/// Parse a dataset file. When expected_categories is 0 the category
/// count is taken from the first record; every later record must match.
/// Malformed records raise InputError naming the line number.
std::vector<GeoSample> load_dataset(const std::filesystem::path& path,
                                    DatasetFormat format,
                                    int expected_categories = 0);

void save_dataset(const std::vector<GeoSample>& samples,
                  const std::filesystem::path& path, DatasetFormat format);

/// Fill GeoSample::tile from tile_ref (path relative to base_dir or
/// inline base64). Tiles already resolved are left alone. Geographic
/// bounds come from the "bounds ..." comment embedded in the PNM header
/// when present, otherwise a small box centered on the sample.
void resolve_tiles(std::vector<GeoSample>& samples,
                   const std::filesystem::path& base_dir);

/// Seeded disjoint partition. |test| = round-half-up(test_fraction * N);
/// both parts preserve the input order.
std::pair<std::vector<GeoSample>, std::vector<GeoSample>> split_dataset(
    const std::vector<GeoSample>& samples, double test_fraction,
    std::uint64_t seed);

/// Affine map from tile mean intensity to a per-category Poisson rate.
struct RateFunction {
  double base = 0.0;
  double gain = 0.0;

  double operator()(double intensity) const { return base + gain * intensity; }
};

enum class SyntheticLayout {
  random,  // locations uniform in bounds, intensity uniform in [0,1]
  grid     // one sample per cell, intensity ramps across the grid
};

struct SyntheticConfig {
  int category_count = 91;
  int sample_count = 1000;
  int tile_rows = 8;
  int tile_cols = 8;
  int tile_channels = 1;
  /// Per-category rate functions; empty selects default_rates().
  std::vector<RateFunction> rates;
  /// Peak-to-peak amplitude of per-pixel jitter around the sample intensity.
  double pixel_noise = 0.05;
  SyntheticLayout layout = SyntheticLayout::random;
  int grid_rows = 0;  // grid layout; 0 derives a near-square grid
  int grid_cols = 0;
  GeoBounds bounds{37.0, 38.0, -123.0, -122.0};
  /// Tile footprint (degrees) in random layout.
  double tile_span_deg = 0.01;
  std::uint64_t seed = 0;
};

/// Default rate functions: every category has mean rate 2.63 at the
/// central intensity 0.5, with gains cycling {4, 1, -2} so categories
/// respond differently to tile content.
std::vector<RateFunction> default_rates(int category_count);

/// Draw a synthetic dataset with known ground truth. Each sample's tile
/// pixels are quantized to the 8-bit grid (so file round-trips are
/// exact); its true rate vector is the configured affine map applied to
/// the realized tile mean intensity, floored at 1e-12; counts are
/// i.i.d. Poisson draws from those rates.
std::vector<GeoSample> generate_synthetic(const SyntheticConfig& config);

struct DatasetStats {
  long sample_count = 0;
  /// Per-sample total -> number of samples with that total.
  std::map<long, long> total_histogram;
  /// Summed counts per category across the dataset.
  std::vector<long> per_category_total;
  /// Mean of per-sample totals over samples with at least one object;
  /// absent when every sample is empty.
  std::optional<double> mean_nonzero_total;
  long max_total = 0;
};

DatasetStats dataset_stats(const std::vector<GeoSample>& samples);

/// Ground-truth sidecar: JSON object mapping sample id -> rate vector.
void save_true_rates(const std::vector<GeoSample>& samples,
                     const std::filesystem::path& path);
void load_true_rates(std::vector<GeoSample>& samples,
                     const std::filesystem::path& path);

}  // namespace geocount
