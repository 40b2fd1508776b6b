#include "cdcm/checkpoint.hpp"

#include <fstream>

namespace cdcm::train {

using nlohmann::json;

void save_checkpoint(const std::string& path, const models::Network& net, long step,
                     double best_val_aucroc, const json& extra) {
  json doc;
  doc["format"] = "cdcm-checkpoint";
  doc["version"] = 1;
  doc["model"] = net.config().to_json();
  doc["step"] = step;
  doc["best_val_aucroc"] = best_val_aucroc;
  if (!extra.is_null()) doc["meta"] = extra;
  json params = json::object();
  for (const auto& p : net.params()) {
    json entry;
    entry["shape"] = p.value.shape;
    entry["data"] = p.value.data;
    params[p.name] = std::move(entry);
  }
  doc["params"] = std::move(params);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  const std::vector<uint8_t> bytes = json::to_msgpack(doc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

models::Network load_checkpoint(const std::string& path, json* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  json doc;
  try {
    doc = json::from_msgpack(bytes);
  } catch (const std::exception& e) {
    throw IoError("corrupt checkpoint '" + path + "': " + e.what());
  }
  check_config(doc.value("format", "") == "cdcm-checkpoint", "not a cdcm checkpoint: " + path);

  models::Network net(models::ModelConfig::from_json(doc.at("model")));
  const json& params = doc.at("params");
  for (auto& p : net.params()) {
    check_config(params.contains(p.name), "checkpoint missing parameter '" + p.name + "'");
    const json& entry = params.at(p.name);
    check_config(entry.at("shape").get<std::vector<int>>() == p.value.shape,
                 "checkpoint shape mismatch for '" + p.name + "'");
    p.value.data = entry.at("data").get<std::vector<double>>();
  }
  if (meta_out) {
    json meta;
    meta["step"] = doc.value("step", 0L);
    meta["best_val_aucroc"] = doc.value("best_val_aucroc", 0.0);
    if (doc.contains("meta")) meta["meta"] = doc.at("meta");
    *meta_out = std::move(meta);
  }
  return net;
}

}  // namespace cdcm::train
