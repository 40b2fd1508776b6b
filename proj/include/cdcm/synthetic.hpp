#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace cdcm::data {

// Desk-scale stand-in for the external patient MRI dataset. Controls are
// smooth random blob fields; case anomaly slices add a localized
// high-frequency texture patch. Roughly 5:1 normal:anomaly slices overall,
// byte-deterministic given the seed.
struct SyntheticPpmrOptions {
  int n_cases = 5;
  int n_controls = 15;          // 3 matched controls per case by default
  int slices_per_patient = 150;
  int image_size = 256;
  uint64_t seed = 0;
};

// Writes root/{case|control}/<patient_id>/<index>_<label>.png plus a
// manifest.json enumerating patients, slice counts and per-file checksums.
// Returns the manifest.
nlohmann::json generate_synthetic_ppmr(const SyntheticPpmrOptions& opts,
                                       const std::string& out_dir);

}  // namespace cdcm::data
