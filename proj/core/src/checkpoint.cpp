#include "geocount/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "config_json.hpp"
#include "geocount/errors.hpp"

namespace geocount {

namespace {

constexpr char kMagic[8] = {'G', 'C', 'K', 'P', 'T', '0', '0', '1'};
constexpr int kVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  append_u64(out, bits);
}

// Row-major payload regardless of Eigen's internal layout.
void append_tensor(std::string& out, const std::string& name,
                   const double* data, Eigen::Index rows, Eigen::Index cols,
                   bool vector_shape) {
  append_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  if (vector_shape) {
    append_u32(out, 1);
    append_u64(out, static_cast<std::uint64_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) append_f64(out, data[i]);
  } else {
    append_u32(out, 2);
    append_u64(out, static_cast<std::uint64_t>(rows));
    append_u64(out, static_cast<std::uint64_t>(cols));
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        append_f64(out, data[c * rows + r]);  // buffer is column-major
  }
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw IoError("corrupt checkpoint: unexpected end of file");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct LoadedTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major
};

LoadedTensor read_tensor(Reader& reader, std::string& name) {
  const std::uint32_t name_len = reader.u32();
  if (name_len > 4096) throw IoError("corrupt checkpoint: bad tensor name");
  name = reader.str(name_len);
  LoadedTensor tensor;
  const std::uint32_t ndim = reader.u32();
  if (ndim < 1 || ndim > 2)
    throw IoError("corrupt checkpoint: tensor '" + name + "' has " +
                  std::to_string(ndim) + " dims");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    tensor.dims.push_back(reader.u64());
    count *= tensor.dims.back();
  }
  if (count > (1ULL << 32))
    throw IoError("corrupt checkpoint: tensor '" + name + "' is too large");
  tensor.values.resize(static_cast<std::size_t>(count));
  for (auto& v : tensor.values) v = reader.f64();
  return tensor;
}

void fill_from_tensor(const LoadedTensor& tensor, const std::string& name,
                      double* data, Eigen::Index rows, Eigen::Index cols,
                      bool vector_shape) {
  if (vector_shape) {
    if (tensor.dims.size() != 1 ||
        tensor.dims[0] != static_cast<std::uint64_t>(rows))
      throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
    for (Eigen::Index i = 0; i < rows; ++i)
      data[i] = tensor.values[static_cast<std::size_t>(i)];
  } else {
    if (tensor.dims.size() != 2 ||
        tensor.dims[0] != static_cast<std::uint64_t>(rows) ||
        tensor.dims[1] != static_cast<std::uint64_t>(cols))
      throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        data[c * rows + r] =
            tensor.values[static_cast<std::size_t>(r * cols + c)];
  }
}

}  // namespace

void save_checkpoint(const CheckpointData& data,
                     const std::filesystem::path& path) {
  const auto views = tensor_views(data.weights);
  if (data.optimizer.m.size() != data.optimizer.v.size() ||
      data.optimizer.m.size() !=
          static_cast<Eigen::Index>(trainable_size(data.weights)))
    throw ShapeError("optimizer state does not match the weights");

  nlohmann::ordered_json header;
  header["version"] = kVersion;
  header["seed"] = data.seed;
  header["epoch"] = data.epoch;
  header["step"] = data.step;
  header["model"] = detail::model_config_to_json(data.model);
  nlohmann::ordered_json optimizer = detail::hyper_to_json(data.optimizer.hyper);
  optimizer["t"] = data.optimizer.t;
  header["optimizer"] = optimizer;
  header["config_echo"] = data.config_json;
  header["tensor_count"] = views.size() + 2;
  const std::string header_text = header.dump();

  std::string body;
  append_u64(body, header_text.size());
  body += header_text;
  for (const auto& view : views)
    append_tensor(body, view.name, view.data, view.rows, view.cols,
                  view.cols == 1 && view.rows == static_cast<Eigen::Index>(view.size));
  append_tensor(body, "optim.m", data.optimizer.m.data(),
                data.optimizer.m.size(), 1, true);
  append_tensor(body, "optim.v", data.optimizer.v.data(),
                data.optimizer.v.size(), 1, true);
  append_u64(body, fnv1a(body));

  std::string payload(kMagic, sizeof(kMagic));
  payload += body;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("short write: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string payload((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  if (payload.size() < sizeof(kMagic) + 16)
    throw IoError("corrupt checkpoint: file too short");
  if (std::memcmp(payload.data(), kMagic, 5) != 0)
    throw IoError("not a checkpoint file (bad magic)");
  if (std::memcmp(payload.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint version mismatch (expected GCKPT001)");

  const std::string body = payload.substr(sizeof(kMagic));
  if (body.size() < 16) throw IoError("corrupt checkpoint: file too short");
  const std::string stored = body.substr(body.size() - 8);
  const std::string hashed = body.substr(0, body.size() - 8);
  std::uint64_t stored_hash = 0;
  for (int i = 0; i < 8; ++i)
    stored_hash |= static_cast<std::uint64_t>(
                       static_cast<unsigned char>(stored[static_cast<std::size_t>(i)]))
                   << (8 * i);
  if (fnv1a(hashed) != stored_hash)
    throw IoError("corrupt checkpoint: checksum mismatch");

  Reader reader(hashed);
  const std::uint64_t header_len = reader.u64();
  if (header_len > hashed.size())
    throw IoError("corrupt checkpoint: bad header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reader.str(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint: bad header json: " +
                  std::string(e.what()));
  }
  if (header.value("version", -1) != kVersion)
    throw IoError("checkpoint version mismatch");

  CheckpointData data;
  data.seed = header.value("seed", std::uint64_t{0});
  data.epoch = header.value("epoch", 0L);
  data.step = header.value("step", 0L);
  data.config_json = header.value("config_echo", std::string{});
  data.model = detail::model_config_from_json(header.at("model"));
  data.weights = make_weights(data.model);
  data.optimizer = init_state(data.weights,
                              detail::hyper_from_json(header.at("optimizer")));
  data.optimizer.t = header.at("optimizer").value("t", 0L);

  const std::size_t tensor_count = header.value("tensor_count", std::size_t{0});
  auto views = tensor_views(data.weights);
  if (tensor_count != views.size() + 2)
    throw IoError("checkpoint tensor count does not match the model config");

  for (auto& view : views) {
    std::string name;
    const LoadedTensor tensor = read_tensor(reader, name);
    if (name != view.name)
      throw IoError("checkpoint tensor order mismatch: expected '" +
                    view.name + "', found '" + name + "'");
    fill_from_tensor(
        tensor, name, view.data, view.rows, view.cols,
        view.cols == 1 && view.rows == static_cast<Eigen::Index>(view.size));
  }
  for (auto* moment : {&data.optimizer.m, &data.optimizer.v}) {
    std::string name;
    const LoadedTensor tensor = read_tensor(reader, name);
    if (name != (moment == &data.optimizer.m ? "optim.m" : "optim.v"))
      throw IoError("checkpoint tensor order mismatch at optimizer moments");
    fill_from_tensor(tensor, name, moment->data(), moment->size(), 1, true);
  }
  if (reader.pos() != hashed.size())
    throw IoError("corrupt checkpoint: trailing bytes");
  return data;
}

}  // namespace geocount
