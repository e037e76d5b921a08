#include "config_json.hpp"

#include "geocount/errors.hpp"

namespace geocount::detail {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json model_config_to_json(const ModelConfig& config) {
  ordered_json doc;
  doc["input_mode"] = config.input_mode == InputMode::tile ? "tile" : "features";
  doc["tile_rows"] = config.tile_rows;
  doc["tile_cols"] = config.tile_cols;
  doc["tile_channels"] = config.tile_channels;
  doc["feature_dim"] = config.feature_dim;
  ordered_json conv = ordered_json::array();
  for (const ConvSpec& spec : config.conv)
    conv.push_back({{"filters", spec.filters},
                    {"kernel", spec.kernel},
                    {"stride", spec.stride}});
  doc["conv"] = conv;
  doc["hidden_width"] = config.hidden_width;
  doc["category_count"] = config.category_count;
  doc["family"] = family_name(config.family);
  doc["leaky_slope"] = config.leaky_slope;
  doc["bn_momentum"] = config.bn_momentum;
  doc["bn_epsilon"] = config.bn_epsilon;
  return doc;
}

ModelConfig model_config_from_json(const json& doc) {
  ModelConfig config;
  try {
    const std::string mode = doc.value("input_mode", "tile");
    if (mode == "tile")
      config.input_mode = InputMode::tile;
    else if (mode == "features")
      config.input_mode = InputMode::features;
    else
      throw ConfigError("unknown input_mode '" + mode + "'");
    config.tile_rows = doc.value("tile_rows", config.tile_rows);
    config.tile_cols = doc.value("tile_cols", config.tile_cols);
    config.tile_channels = doc.value("tile_channels", config.tile_channels);
    config.feature_dim = doc.value("feature_dim", config.feature_dim);
    if (doc.contains("conv")) {
      for (const auto& entry : doc.at("conv")) {
        ConvSpec spec;
        spec.filters = entry.value("filters", spec.filters);
        spec.kernel = entry.value("kernel", spec.kernel);
        spec.stride = entry.value("stride", spec.stride);
        config.conv.push_back(spec);
      }
    }
    config.hidden_width = doc.value("hidden_width", config.hidden_width);
    config.category_count = doc.value("category_count", config.category_count);
    if (doc.contains("family"))
      config.family = family_from_name(doc.at("family").get<std::string>());
    config.leaky_slope = doc.value("leaky_slope", config.leaky_slope);
    config.bn_momentum = doc.value("bn_momentum", config.bn_momentum);
    config.bn_epsilon = doc.value("bn_epsilon", config.bn_epsilon);
  } catch (const json::exception& e) {
    throw ConfigError("bad model config: " + std::string(e.what()));
  }
  return config;
}

ordered_json hyper_to_json(const NadamHyper& hyper) {
  return {{"learning_rate", hyper.learning_rate},
          {"beta1", hyper.beta1},
          {"beta2", hyper.beta2},
          {"epsilon", hyper.epsilon},
          {"clip_norm", hyper.clip_norm}};
}

NadamHyper hyper_from_json(const json& doc) {
  NadamHyper hyper;
  try {
    hyper.learning_rate = doc.value("learning_rate", hyper.learning_rate);
    hyper.beta1 = doc.value("beta1", hyper.beta1);
    hyper.beta2 = doc.value("beta2", hyper.beta2);
    hyper.epsilon = doc.value("epsilon", hyper.epsilon);
    hyper.clip_norm = doc.value("clip_norm", hyper.clip_norm);
  } catch (const json::exception& e) {
    throw ConfigError("bad optimizer config: " + std::string(e.what()));
  }
  return hyper;
}

ordered_json train_config_to_json_obj(const TrainConfig& config) {
  ordered_json doc;
  doc["model"] = model_config_to_json(config.model);
  doc["optimizer"] = hyper_to_json(config.optimizer);
  doc["epochs"] = config.epochs;
  doc["batch_size"] = config.batch_size;
  doc["seed"] = config.seed;
  doc["checkpoint_every"] = config.checkpoint_every;
  return doc;
}

TrainConfig train_config_from_json_obj(const json& doc) {
  TrainConfig config;
  try {
    if (doc.contains("model"))
      config.model = model_config_from_json(doc.at("model"));
    if (doc.contains("optimizer"))
      config.optimizer = hyper_from_json(doc.at("optimizer"));
    config.epochs = doc.value("epochs", config.epochs);
    config.batch_size = doc.value("batch_size", config.batch_size);
    config.seed = doc.value("seed", config.seed);
    config.checkpoint_every = doc.value("checkpoint_every", config.checkpoint_every);
  } catch (const json::exception& e) {
    throw ConfigError("bad train config: " + std::string(e.what()));
  }
  return config;
}

}  // namespace geocount::detail
