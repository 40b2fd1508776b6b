#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "cdcm/models.hpp"

namespace cdcm::train {

// Self-describing checkpoint container (MessagePack): model config echo,
// named parameter arrays, training-step counter, best validation AUCROC and
// any extra metadata the caller supplies.
void save_checkpoint(const std::string& path, const models::Network& net, long step,
                     double best_val_aucroc, const nlohmann::json& extra = {});

models::Network load_checkpoint(const std::string& path, nlohmann::json* meta_out = nullptr);

}  // namespace cdcm::train
