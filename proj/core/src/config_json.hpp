#pragma once

#include <json.hpp>

#include "geocount/net.hpp"
#include "geocount/optim.hpp"
#include "geocount/trainer.hpp"

namespace geocount::detail {

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

nlohmann::ordered_json hyper_to_json(const NadamHyper& hyper);
NadamHyper hyper_from_json(const nlohmann::json& doc);

nlohmann::ordered_json train_config_to_json_obj(const TrainConfig& config);
TrainConfig train_config_from_json_obj(const nlohmann::json& doc);

}  // namespace geocount::detail
