#include "geocount/counts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "geocount/errors.hpp"
#include "geocount/image.hpp"
#include "geocount/rng.hpp"

namespace geocount {

namespace {

constexpr double kRateFloor = 1e-12;
constexpr double kDefaultTileHalfSpan = 0.005;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_latlon(double lat, double lon, const std::string& where) {
  if (!(lat >= -90.0 && lat <= 90.0))
    throw InputError(where + ": latitude out of [-90, 90]: " + fmt_double(lat));
  if (!(lon >= -180.0 && lon <= 180.0))
    throw InputError(where + ": longitude out of [-180, 180]: " + fmt_double(lon));
}

}  // namespace

long ObjectHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0L);
}

void validate_tile(const OverheadTile& tile) {
  if (tile.rows < 1 || tile.cols < 1 || tile.channels < 1)
    throw ShapeError("tile dimensions must be at least 1");
  if (tile.pixels.size() != tile.pixel_count())
    throw ShapeError("tile pixel buffer size mismatch");
  for (Eigen::Index i = 0; i < tile.pixels.size(); ++i) {
    const double v = tile.pixels[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw InputError("tile pixel outside [0,1]: " + fmt_double(v));
  }
  if (tile.bounds.degenerate()) throw InputError("tile bounds are degenerate");
}

bool same_record(const GeoSample& a, const GeoSample& b) {
  return a.id == b.id && a.lat == b.lat && a.lon == b.lon &&
         a.histogram == b.histogram && a.tile_ref == b.tile_ref;
}

ObjectHistogram build_histogram(const std::vector<Detection>& detections,
                                double threshold, int category_count) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw InputError("threshold must be in [0,1]: " + fmt_double(threshold));
  if (category_count < 1)
    throw InputError("category_count must be at least 1");
  ObjectHistogram hist;
  hist.counts.assign(static_cast<std::size_t>(category_count), 0);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const Detection& det = detections[i];
    if (det.category_id < 0 || det.category_id >= category_count)
      throw InputError("detection " + std::to_string(i) + " has category_id " +
                       std::to_string(det.category_id) + " outside [0, " +
                       std::to_string(category_count) + ")");
    if (!(det.score >= 0.0 && det.score <= 1.0))
      throw InputError("detection " + std::to_string(i) +
                       " has score outside [0,1]: " + fmt_double(det.score));
    if (det.score > threshold)  // strict: scores at the threshold are dropped
      ++hist.counts[static_cast<std::size_t>(det.category_id)];
  }
  return hist;
}

namespace {

GeoSample parse_jsonl_record(const std::string& line, long line_no,
                             int& categories) {
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("line " + std::to_string(line_no) +
                     ": invalid json: " + e.what());
  }
  const auto where = "line " + std::to_string(line_no);
  if (!rec.is_object()) throw InputError(where + ": record is not an object");
  for (const char* key : {"id", "lat", "lon", "counts", "tile"})
    if (!rec.contains(key))
      throw InputError(where + ": missing field '" + key + "'");
  GeoSample sample;
  try {
    sample.id = rec.at("id").get<std::string>();
    sample.lat = rec.at("lat").get<double>();
    sample.lon = rec.at("lon").get<double>();
    sample.tile_ref = rec.at("tile").get<std::string>();
    sample.histogram.counts = rec.at("counts").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(where + ": bad field type: " + e.what());
  }
  check_latlon(sample.lat, sample.lon, where);
  for (int c : sample.histogram.counts)
    if (c < 0) throw InputError(where + ": negative count");
  if (categories == 0) categories = sample.histogram.categories();
  if (sample.histogram.categories() != categories)
    throw InputError(where + ": histogram length " +
                     std::to_string(sample.histogram.categories()) +
                     " does not match category count " +
                     std::to_string(categories));
  return sample;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

double parse_double_field(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": bad numeric field '" + s + "'");
  }
}

int parse_count_field(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    if (v < 0) throw InputError(where + ": negative count");
    return v;
  } catch (const InputError&) {
    throw;
  } catch (const std::exception&) {
    throw InputError(where + ": bad count field '" + s + "'");
  }
}

std::string csv_header(int categories) {
  std::string header = "id,lat,lon,tile";
  for (int c = 0; c < categories; ++c) header += ",c" + std::to_string(c);
  return header;
}

}  // namespace

std::vector<GeoSample> load_dataset(const std::filesystem::path& path,
                                    DatasetFormat format,
                                    int expected_categories) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::vector<GeoSample> samples;
  int categories = expected_categories;
  std::string line;
  long line_no = 0;

  if (format == DatasetFormat::jsonl) {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      samples.push_back(parse_jsonl_record(line, line_no, categories));
    }
    return samples;
  }

  // csv
  if (!std::getline(in, line)) throw InputError("line 1: missing csv header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (categories == 0) {
    const auto fields = split_csv_line(line);
    if (fields.size() < 5)
      throw InputError("line 1: csv header needs at least one count column");
    categories = static_cast<int>(fields.size()) - 4;
  }
  if (line != csv_header(categories))
    throw InputError("line 1: csv header must be '" + csv_header(categories) +
                     "'");
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(line_no);
    const auto fields = split_csv_line(line);
    if (fields.size() != static_cast<std::size_t>(categories) + 4)
      throw InputError(where + ": expected " + std::to_string(categories + 4) +
                       " fields, got " + std::to_string(fields.size()));
    GeoSample sample;
    sample.id = fields[0];
    sample.lat = parse_double_field(fields[1], where);
    sample.lon = parse_double_field(fields[2], where);
    sample.tile_ref = fields[3];
    check_latlon(sample.lat, sample.lon, where);
    sample.histogram.counts.reserve(static_cast<std::size_t>(categories));
    for (int c = 0; c < categories; ++c)
      sample.histogram.counts.push_back(
          parse_count_field(fields[static_cast<std::size_t>(c) + 4], where));
    samples.push_back(std::move(sample));
  }
  return samples;
}

void save_dataset(const std::vector<GeoSample>& samples,
                  const std::filesystem::path& path, DatasetFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (format == DatasetFormat::jsonl) {
    for (const GeoSample& s : samples) {
      nlohmann::ordered_json rec;
      rec["id"] = s.id;
      rec["lat"] = s.lat;
      rec["lon"] = s.lon;
      rec["counts"] = s.histogram.counts;
      rec["tile"] = s.tile_ref;
      out << rec.dump() << "\n";
    }
  } else {
    const int categories = samples.empty() ? 0 : samples[0].histogram.categories();
    out << csv_header(categories) << "\n";
    for (const GeoSample& s : samples) {
      if (s.id.find(',') != std::string::npos ||
          s.tile_ref.find(',') != std::string::npos)
        throw InputError("csv fields must not contain commas (sample '" +
                         s.id + "')");
      if (s.histogram.categories() != categories)
        throw ShapeError("sample '" + s.id + "' histogram length mismatch");
      out << s.id << "," << fmt_double(s.lat) << "," << fmt_double(s.lon)
          << "," << s.tile_ref;
      for (int c : s.histogram.counts) out << "," << c;
      out << "\n";
    }
  }
  if (!out) throw IoError("short write: " + path.string());
}

std::string bounds_comment(const GeoBounds& bounds) {
  return "bounds " + fmt_double(bounds.lat_min) + " " +
         fmt_double(bounds.lat_max) + " " + fmt_double(bounds.lon_min) + " " +
         fmt_double(bounds.lon_max);
}

namespace {

bool parse_bounds_comment(const std::string& comment, GeoBounds& bounds) {
  std::istringstream in(comment);
  std::string word;
  while (in >> word) {
    if (word != "bounds") continue;
    GeoBounds b;
    if (in >> b.lat_min >> b.lat_max >> b.lon_min >> b.lon_max) {
      bounds = b;
      return true;
    }
    return false;
  }
  return false;
}

}  // namespace

ImageU8 tile_to_image(const OverheadTile& tile) {
  validate_tile(tile);
  ImageU8 image;
  image.rows = tile.rows;
  image.cols = tile.cols;
  image.channels = tile.channels;
  image.data.resize(static_cast<std::size_t>(tile.pixel_count()));
  for (int y = 0; y < tile.rows; ++y)
    for (int x = 0; x < tile.cols; ++x)
      for (int c = 0; c < tile.channels; ++c)
        image.at(y, x, c) = static_cast<std::uint8_t>(
            std::lround(tile.at(c, y, x) * 255.0));
  return image;
}

OverheadTile image_to_tile(const ImageU8& image, const GeoBounds& bounds) {
  OverheadTile tile;
  tile.rows = image.rows;
  tile.cols = image.cols;
  tile.channels = image.channels;
  tile.bounds = bounds;
  tile.pixels.resize(tile.pixel_count());
  for (int y = 0; y < tile.rows; ++y)
    for (int x = 0; x < tile.cols; ++x)
      for (int c = 0; c < tile.channels; ++c)
        tile.at(c, y, x) = static_cast<double>(image.at(y, x, c)) / 255.0;
  validate_tile(tile);
  return tile;
}

void resolve_tiles(std::vector<GeoSample>& samples,
                   const std::filesystem::path& base_dir) {
  for (GeoSample& sample : samples) {
    if (sample.tile.has_value()) continue;
    if (sample.tile_ref.empty())
      throw StateError("sample '" + sample.id + "' has no tile reference");
    std::string bytes;
    if (sample.tile_ref.rfind("base64:", 0) == 0) {
      bytes = base64_decode(sample.tile_ref.substr(7));
    } else {
      const auto tile_path = base_dir / sample.tile_ref;
      std::ifstream in(tile_path, std::ios::binary);
      if (!in)
        throw IoError("sample '" + sample.id +
                      "': cannot open tile " + tile_path.string());
      std::ostringstream buffer;
      buffer << in.rdbuf();
      bytes = buffer.str();
    }
    std::string comment;
    ImageU8 image;
    try {
      image = decode_pnm(bytes, &comment);
    } catch (const Error& e) {
      throw IoError("sample '" + sample.id + "': " + e.what());
    }
    GeoBounds bounds{sample.lat - kDefaultTileHalfSpan,
                     sample.lat + kDefaultTileHalfSpan,
                     sample.lon - kDefaultTileHalfSpan,
                     sample.lon + kDefaultTileHalfSpan};
    parse_bounds_comment(comment, bounds);
    sample.tile = image_to_tile(image, bounds);
  }
}

std::pair<std::vector<GeoSample>, std::vector<GeoSample>> split_dataset(
    const std::vector<GeoSample>& samples, double test_fraction,
    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InputError("test_fraction must be in (0,1): " +
                     fmt_double(test_fraction));
  const std::size_t n = samples.size();
  if (n < 2) throw InputError("split needs at least 2 samples");
  const auto n_test = static_cast<std::size_t>(
      std::floor(test_fraction * static_cast<double>(n) + 0.5));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<bool> in_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) in_test[order[i]] = true;

  std::pair<std::vector<GeoSample>, std::vector<GeoSample>> parts;
  parts.first.reserve(n - n_test);
  parts.second.reserve(n_test);
  for (std::size_t i = 0; i < n; ++i)
    (in_test[i] ? parts.second : parts.first).push_back(samples[i]);
  return parts;
}

std::vector<RateFunction> default_rates(int category_count) {
  static constexpr double kGains[] = {4.0, 1.0, -2.0};
  std::vector<RateFunction> rates;
  rates.reserve(static_cast<std::size_t>(category_count));
  for (int c = 0; c < category_count; ++c) {
    const double gain = kGains[c % 3];
    rates.push_back({2.63 - 0.5 * gain, gain});
  }
  return rates;
}

std::vector<GeoSample> generate_synthetic(const SyntheticConfig& config) {
  if (config.category_count < 1)
    throw ConfigError("category_count must be at least 1");
  if (config.sample_count < 1)
    throw ConfigError("sample_count must be at least 1");
  if (config.tile_rows < 1 || config.tile_cols < 1)
    throw ConfigError("tile dimensions must be at least 1");
  if (config.tile_channels != 1 && config.tile_channels != 3)
    throw ConfigError("tile_channels must be 1 or 3");
  if (config.pixel_noise < 0.0)
    throw ConfigError("pixel_noise must be non-negative");
  if (config.bounds.degenerate())
    throw ConfigError("synthetic bounds are degenerate");
  if (config.tile_span_deg <= 0.0)
    throw ConfigError("tile_span_deg must be positive");

  const std::vector<RateFunction> rates =
      config.rates.empty() ? default_rates(config.category_count)
                           : config.rates;
  if (rates.size() != static_cast<std::size_t>(config.category_count))
    throw ConfigError("rates size does not match category_count");

  int grid_rows = config.grid_rows;
  int grid_cols = config.grid_cols;
  if (config.layout == SyntheticLayout::grid) {
    if (grid_rows <= 0)
      grid_rows = static_cast<int>(
          std::ceil(std::sqrt(static_cast<double>(config.sample_count))));
    if (grid_cols <= 0)
      grid_cols = (config.sample_count + grid_rows - 1) / grid_rows;
    if (static_cast<long>(grid_rows) * grid_cols < config.sample_count)
      throw ConfigError("grid is too small for sample_count");
  }

  Rng rng(config.seed);
  const GeoBounds& b = config.bounds;
  std::vector<GeoSample> samples;
  samples.reserve(static_cast<std::size_t>(config.sample_count));

  for (int i = 0; i < config.sample_count; ++i) {
    GeoSample sample;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06d", i);
    sample.id = id;

    double intensity;
    if (config.layout == SyntheticLayout::grid) {
      const int row = i / grid_cols;
      const int col = i % grid_cols;
      const double dlat = (b.lat_max - b.lat_min) / grid_rows;
      const double dlon = (b.lon_max - b.lon_min) / grid_cols;
      // row 0 is the northern edge
      sample.tile = OverheadTile{};
      sample.tile->bounds = {b.lat_max - (row + 1) * dlat,
                             b.lat_max - row * dlat,
                             b.lon_min + col * dlon,
                             b.lon_min + (col + 1) * dlon};
      sample.lat = b.lat_max - (row + 0.5) * dlat;
      sample.lon = b.lon_min + (col + 0.5) * dlon;
      const double fr = grid_rows > 1
                            ? static_cast<double>(row) / (grid_rows - 1)
                            : 0.5;
      const double fc = grid_cols > 1
                            ? static_cast<double>(col) / (grid_cols - 1)
                            : 0.5;
      intensity = 0.5 * (fr + fc);
    } else {
      sample.lat = rng.uniform(b.lat_min, b.lat_max);
      sample.lon = rng.uniform(b.lon_min, b.lon_max);
      intensity = rng.uniform();
      const double half = 0.5 * config.tile_span_deg;
      sample.tile = OverheadTile{};
      sample.tile->bounds = {sample.lat - half, sample.lat + half,
                             sample.lon - half, sample.lon + half};
    }

    OverheadTile& tile = *sample.tile;
    tile.rows = config.tile_rows;
    tile.cols = config.tile_cols;
    tile.channels = config.tile_channels;
    tile.pixels.resize(tile.pixel_count());
    for (Eigen::Index p = 0; p < tile.pixels.size(); ++p) {
      double v = intensity + config.pixel_noise * (rng.uniform() - 0.5);
      v = std::clamp(v, 0.0, 1.0);
      tile.pixels[p] = std::lround(v * 255.0) / 255.0;  // 8-bit grid
    }

    const double mean = tile.mean_intensity();
    sample.true_rates.resize(rates.size());
    sample.histogram.counts.resize(rates.size());
    for (std::size_t c = 0; c < rates.size(); ++c) {
      const double rate = std::max(rates[c](mean), kRateFloor);
      sample.true_rates[c] = rate;
      sample.histogram.counts[c] =
          rate <= kRateFloor ? 0 : static_cast<int>(rng.poisson(rate));
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

DatasetStats dataset_stats(const std::vector<GeoSample>& samples) {
  if (samples.empty()) throw InputError("dataset_stats needs a non-empty list");
  const int categories = samples[0].histogram.categories();
  DatasetStats stats;
  stats.sample_count = static_cast<long>(samples.size());
  stats.per_category_total.assign(static_cast<std::size_t>(categories), 0);
  long nonzero_samples = 0;
  double nonzero_sum = 0.0;
  for (const GeoSample& s : samples) {
    if (s.histogram.categories() != categories)
      throw ShapeError("sample '" + s.id + "' histogram length mismatch");
    const long total = s.histogram.total();
    ++stats.total_histogram[total];
    stats.max_total = std::max(stats.max_total, total);
    if (total > 0) {
      ++nonzero_samples;
      nonzero_sum += static_cast<double>(total);
    }
    for (int c = 0; c < categories; ++c)
      stats.per_category_total[static_cast<std::size_t>(c)] +=
          s.histogram.counts[static_cast<std::size_t>(c)];
  }
  if (nonzero_samples > 0)
    stats.mean_nonzero_total = nonzero_sum / static_cast<double>(nonzero_samples);
  return stats;
}

void save_true_rates(const std::vector<GeoSample>& samples,
                     const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  for (const GeoSample& s : samples)
    if (!s.true_rates.empty()) doc[s.id] = s.true_rates;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("short write: " + path.string());
}

void load_true_rates(std::vector<GeoSample>& samples,
                     const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad true-rate sidecar: " + std::string(e.what()));
  }
  for (GeoSample& s : samples) {
    const auto it = doc.find(s.id);
    if (it != doc.end()) s.true_rates = it->get<std::vector<double>>();
  }
}

}  // namespace geocount
