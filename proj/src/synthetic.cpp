#include "cdcm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdcm/common.hpp"
#include "cdcm/data.hpp"
#include "cdcm/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::data {

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Bump {
  double cy, cx, sy, sx, amp;
};

// Smooth blob field shared by all slices of a patient, with per-slice jitter.
std::vector<Bump> patient_bumps(Rng& rng, int size, int count) {
  std::vector<Bump> bumps;
  for (int i = 0; i < count; ++i) {
    Bump b;
    b.cy = rng.uniform(0.15, 0.85) * size;
    b.cx = rng.uniform(0.15, 0.85) * size;
    b.sy = rng.uniform(0.10, 0.30) * size;
    b.sx = rng.uniform(0.10, 0.30) * size;
    b.amp = rng.uniform(0.25, 0.55);
    bumps.push_back(b);
  }
  return bumps;
}

img::Image8 render_slice(const std::vector<Bump>& bumps, int size, bool anomalous, Rng& rng) {
  std::vector<double> field(static_cast<size_t>(size) * size, 0.12);
  const double jitter = rng.uniform(-0.03, 0.03);
  for (const Bump& b : bumps) {
    const double amp = b.amp + jitter;
    for (int y = 0; y < size; ++y) {
      const double dy = (y - b.cy) / b.sy;
      for (int x = 0; x < size; ++x) {
        const double dx = (x - b.cx) / b.sx;
        field[static_cast<size_t>(y) * size + x] += amp * std::exp(-0.5 * (dy * dy + dx * dx));
      }
    }
  }
  if (anomalous) {
    // localized high-frequency texture patch (many small ridges)
    const double py = rng.uniform(0.25, 0.75) * size;
    const double px = rng.uniform(0.25, 0.75) * size;
    const double radius = rng.uniform(0.10, 0.18) * size;
    const double wavelen = rng.uniform(4.0, 8.0);
    const double phase_y = rng.uniform(0.0, kTwoPi);
    const double phase_x = rng.uniform(0.0, kTwoPi);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double d2 = ((y - py) * (y - py) + (x - px) * (x - px)) / (radius * radius);
        if (d2 > 4.0) continue;
        const double window = std::exp(-0.5 * d2);
        const double tex = std::sin(kTwoPi * y / wavelen + phase_y) *
                           std::sin(kTwoPi * x / wavelen + phase_x);
        field[static_cast<size_t>(y) * size + x] += 0.40 * window * tex;
      }
  }
  img::Image8 out;
  out.h = out.w = size;
  out.pixels.resize(static_cast<size_t>(out.size()));
  for (int p = 0; p < size * size; ++p) {
    const double noise = rng.uniform(-0.02, 0.02);
    for (int ch = 0; ch < 3; ++ch) {
      const double gain = 1.0 - 0.03 * ch;
      double v = (field[static_cast<size_t>(p)] + noise) * gain;
      v = std::max(0.0, std::min(1.0, v));
      out.pixels[static_cast<size_t>(p * 3 + ch)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  }
  return out;
}

std::string zpad(int v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, v);
  return buf;
}

}  // namespace

json generate_synthetic_ppmr(const SyntheticPpmrOptions& opts, const std::string& out_dir) {
  check_config(opts.n_cases >= 5,
               "synthetic dataset needs at least 5 case patients for 5-fold CV, got " +
                   std::to_string(opts.n_cases));
  check_config(opts.n_controls >= 0 && opts.slices_per_patient >= 2 && opts.image_size >= 32,
               "bad synthetic dataset options");

  const int n_patients = opts.n_cases + opts.n_controls;
  const int total_slices = n_patients * opts.slices_per_patient;
  // target overall normal:anomaly ratio of 5:1, spread evenly over the cases
  const int total_anomalies = total_slices / 6;
  check_config(total_anomalies <= opts.n_cases * opts.slices_per_patient,
               "cannot place the anomaly slices: too few case slices");

  fs::create_directories(fs::path(out_dir) / "case");
  fs::create_directories(fs::path(out_dir) / "control");

  json patients = json::array();

  auto emit_patient = [&](const std::string& group, const std::string& id,
                          const std::string& matched_case, int n_anomaly, uint64_t pseed) {
    const fs::path dir = fs::path(out_dir) / group / id;
    fs::create_directories(dir);
    Rng prng(pseed);
    auto bumps = patient_bumps(prng, opts.image_size, 7);

    // anomalous slice positions: a contiguous run at a random offset, the way
    // lesions span neighboring slices
    std::vector<int> labels(static_cast<size_t>(opts.slices_per_patient), 0);
    if (n_anomaly > 0) {
      const int start = static_cast<int>(
          prng.uniform_index(static_cast<uint64_t>(opts.slices_per_patient - n_anomaly + 1)));
      for (int s = start; s < start + n_anomaly; ++s) labels[static_cast<size_t>(s)] = 1;
    }
    json checksums = json::object();
    for (int s = 0; s < opts.slices_per_patient; ++s) {
      Rng srng(mix64(pseed ^ static_cast<uint64_t>(s + 1)));
      img::Image8 im = render_slice(bumps, opts.image_size, labels[static_cast<size_t>(s)] == 1, srng);
      const std::string name =
          zpad(s, 3) + (labels[static_cast<size_t>(s)] == 1 ? "_anomaly" : "_normal") + ".png";
      img::write_png((dir / name).string(), im);
      char hex[16];
      std::snprintf(hex, sizeof hex, "%08x", img::crc32_of(im.pixels));
      checksums[name] = hex;
    }
    json p;
    p["id"] = id;
    p["group"] = group;
    if (!matched_case.empty()) p["matched_case"] = matched_case;
    p["n_slices"] = opts.slices_per_patient;
    p["n_anomaly"] = n_anomaly;
    p["checksums"] = std::move(checksums);
    patients.push_back(std::move(p));
  };

  // spread anomalies as evenly as possible over cases
  std::vector<int> per_case(static_cast<size_t>(opts.n_cases),
                            total_anomalies / opts.n_cases);
  for (int i = 0; i < total_anomalies % opts.n_cases; ++i) per_case[static_cast<size_t>(i)]++;

  for (int ci = 0; ci < opts.n_cases; ++ci) {
    const std::string id = "case_" + zpad(ci + 1, 3);
    emit_patient("case", id, "", per_case[static_cast<size_t>(ci)],
                 substream(opts.seed, "patient-case", static_cast<uint64_t>(ci)));
  }
  for (int ki = 0; ki < opts.n_controls; ++ki) {
    const int matched = opts.n_cases > 0 ? ki % opts.n_cases : 0;
    const std::string case_id = "case_" + zpad(matched + 1, 3);
    const std::string id = "ctrl_" + case_id + "_" + zpad(ki / opts.n_cases + 1, 2);
    emit_patient("control", id, case_id, 0,
                 substream(opts.seed, "patient-ctrl", static_cast<uint64_t>(ki)));
  }

  json manifest;
  manifest["dataset"] = "synthetic-ppmr";
  manifest["seed"] = opts.seed;
  manifest["n_cases"] = opts.n_cases;
  manifest["n_controls"] = opts.n_controls;
  manifest["slices_per_patient"] = opts.slices_per_patient;
  manifest["image_size"] = opts.image_size;
  manifest["total_slices"] = total_slices;
  manifest["total_anomalies"] = total_anomalies;
  manifest["patients"] = std::move(patients);

  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// Procedural 10-class image store

namespace {

// Distinct texture family per class; parameters jittered per image.
void render_class_image(int cls, Rng& rng, int size, float* out) {
  std::vector<double> base(static_cast<size_t>(size) * size, 0.0);
  const double bg = rng.uniform(0.35, 0.55);
  const double contrast = rng.uniform(0.28, 0.40);
  const double phase = rng.uniform(0.0, kTwoPi);

  auto grating = [&](double angle_deg, double cycles) {
    const double a = angle_deg * 0.017453292519943295 + rng.uniform(-0.12, 0.12);
    const double ky = std::sin(a) * kTwoPi * cycles / size;
    const double kx = std::cos(a) * kTwoPi * cycles / size;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        base[static_cast<size_t>(y) * size + x] = std::sin(ky * y + kx * x + phase);
  };

  switch (cls) {
    case 0: grating(0.0, rng.uniform(3.0, 4.5)); break;
    case 1: grating(90.0, rng.uniform(3.0, 4.5)); break;
    case 2: grating(45.0, rng.uniform(3.0, 4.5)); break;
    case 3: grating(135.0, rng.uniform(3.0, 4.5)); break;
    case 4: {  // coarse checkerboard
      const int cell = 8;
      const int oy = static_cast<int>(rng.uniform_index(cell)), ox = static_cast<int>(rng.uniform_index(cell));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          base[static_cast<size_t>(y) * size + x] =
              (((y + oy) / cell + (x + ox) / cell) % 2 == 0) ? 1.0 : -1.0;
      break;
    }
    case 5: {  // fine checkerboard
      const int cell = 3;
      const int oy = static_cast<int>(rng.uniform_index(cell)), ox = static_cast<int>(rng.uniform_index(cell));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          base[static_cast<size_t>(y) * size + x] =
              (((y + oy) / cell + (x + ox) / cell) % 2 == 0) ? 1.0 : -1.0;
      break;
    }
    case 6: {  // dark spots on light field
      const int n_spots = 3 + static_cast<int>(rng.uniform_index(3));
      std::fill(base.begin(), base.end(), 0.8);
      for (int s = 0; s < n_spots; ++s) {
        const double cy = rng.uniform(0.2, 0.8) * size, cx = rng.uniform(0.2, 0.8) * size;
        const double r = rng.uniform(3.0, 6.0);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (r * r);
            base[static_cast<size_t>(y) * size + x] -= 1.8 * std::exp(-0.5 * d2);
          }
      }
      break;
    }
    case 7: {  // thick horizontal bars (square wave)
      const double period = rng.uniform(7.0, 10.0);
      const double off = rng.uniform(0.0, period);
      for (int y = 0; y < size; ++y) {
        const double v = std::fmod(y + off, period) < period / 2 ? 1.0 : -1.0;
        for (int x = 0; x < size; ++x) base[static_cast<size_t>(y) * size + x] = v;
      }
      break;
    }
    case 8: {  // concentric rings
      const double cy = size / 2.0 + rng.uniform(-2.0, 2.0);
      const double cx = size / 2.0 + rng.uniform(-2.0, 2.0);
      const double wavelen = rng.uniform(5.0, 7.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double r = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
          base[static_cast<size_t>(y) * size + x] = std::sin(kTwoPi * r / wavelen + phase);
        }
      break;
    }
    default: {  // 9: radial spokes
      const double cy = size / 2.0 + rng.uniform(-2.0, 2.0);
      const double cx = size / 2.0 + rng.uniform(-2.0, 2.0);
      const double spokes = 6.0 + std::floor(rng.uniform(0.0, 3.0));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double a = std::atan2(y - cy, x - cx);
          base[static_cast<size_t>(y) * size + x] = std::sin(spokes * a + phase);
        }
      break;
    }
  }

  for (int p = 0; p < size * size; ++p) {
    const double noise = rng.uniform(-0.08, 0.08);
    for (int ch = 0; ch < 3; ++ch) {
      const double gain = 1.0 + 0.05 * (ch - 1) * rng.uniform(0.0, 1.0);
      double v = bg + contrast * base[static_cast<size_t>(p)] * gain + noise;
      out[p * 3 + ch] = static_cast<float>(std::max(0.0, std::min(1.0, v)));
    }
  }
}

}  // namespace

void SyntheticClassStore::fetch(bool test_split, int cls, int index, float* out) const {
  check_config(cls >= 0 && cls < 10, "class id out of range");
  check_config(index >= 0 && index < (test_split ? test_per_class_ : train_per_class_),
               "image index out of range");
  const uint64_t key = (static_cast<uint64_t>(test_split ? 1 : 0) * 10 + static_cast<uint64_t>(cls)) *
                           1000000ULL +
                       static_cast<uint64_t>(index);
  Rng rng(substream(seed_, "class-image", key));
  render_class_image(cls, rng, 32, out);
}

}  // namespace cdcm::data
