#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cdcm/data.hpp"
#include "cdcm/losses.hpp"
#include "cdcm/models.hpp"
#include "cdcm/training.hpp"

namespace cdcm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAbort = 3;

// Raised to signal the training-abort exit code after the abort report has
// been written.
struct AbortExit : std::runtime_error {
  explicit AbortExit(const std::string& msg) : std::runtime_error(msg) {}
};

struct SourceOpts {
  std::string kind = "synthetic";  // synthetic | cifar10-bin
  std::string dir;
  uint64_t seed = 0;
};

inline nlohmann::json source_json(const SourceOpts& s) {
  nlohmann::json j;
  j["kind"] = s.kind;
  if (s.kind == "cifar10-bin") j["dir"] = s.dir;
  if (s.kind == "synthetic") j["seed"] = s.seed;
  return j;
}

inline std::unique_ptr<data::ClassImageStore> make_store(const nlohmann::json& src) {
  const std::string kind = src.at("kind").get<std::string>();
  if (kind == "synthetic")
    return std::make_unique<data::SyntheticClassStore>(src.value("seed", 0ULL));
  if (kind == "cifar10-bin")
    return std::make_unique<data::Cifar10BinStore>(src.at("dir").get<std::string>());
  throw ConfigError("unknown image source kind '" + kind + "'");
}

inline std::unique_ptr<data::ClassImageStore> make_store(const SourceOpts& s) {
  return make_store(source_json(s));
}

inline std::vector<double> make_center(const std::string& kind, int dim, uint64_t seed) {
  std::vector<double> c(static_cast<size_t>(dim));
  if (kind == "ones") {
    std::fill(c.begin(), c.end(), 1.0);
  } else if (kind == "zeros") {
    std::fill(c.begin(), c.end(), 0.0);
  } else if (kind == "random") {
    Rng rng(substream(seed, "center"));
    for (double& v : c) v = rng.uniform();
  } else {
    throw ConfigError("center must be one of ones|zeros|random, got '" + kind + "'");
  }
  return c;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

void register_build_data(CLI::App& app);
void register_train(CLI::App& app);
void register_evaluate(CLI::App& app);
void register_compare(CLI::App& app);
void register_report(CLI::App& app);

}  // namespace cdcm::cli
