#include "cdcm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "cdcm/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::data {

void ImageBatch::append(const float* img) {
  pixels.insert(pixels.end(), img, img + image_elems());
  ++n;
}

nn::Tensor ImageBatch::to_tensor(const std::vector<int>& indices) const {
  nn::Tensor t({static_cast<int>(indices.size()), h, w, c});
  const int64_t e = image_elems();
  for (size_t i = 0; i < indices.size(); ++i) {
    const float* src = image(indices[i]);
    double* dst = t.data.data() + static_cast<int64_t>(i) * e;
    for (int64_t k = 0; k < e; ++k) dst[k] = src[k];
  }
  return t;
}

nn::Tensor ImageBatch::to_tensor() const {
  std::vector<int> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  return to_tensor(all);
}

void Part::validate() const {
  check_config(static_cast<int>(labels.size()) == images.n, "labels do not match image count");
  check_config(provenance.empty() || provenance.size() == labels.size(),
               "provenance must be absent or per-sample");
  check_config(groups.empty() || groups.size() == labels.size(),
               "groups must be absent or per-sample");
}

AnomalySplitSpec AnomalySplitSpec::for_normal_class(int normal_class, uint64_t seed) {
  check_config(normal_class >= 0 && normal_class <= 9, "normal-class must be in 0..9");
  AnomalySplitSpec s;
  s.normal_class = normal_class;
  s.seed = seed;
  for (int i = 0; i < 5; ++i) s.seen_anomaly_classes[static_cast<size_t>(i)] = (normal_class + 1 + i) % 10;
  for (int i = 0; i < 4; ++i) s.unseen_anomaly_classes[static_cast<size_t>(i)] = (normal_class + 6 + i) % 10;
  return s;
}

bool AnomalySplitSpec::is_seen(int cls) const {
  return std::find(seen_anomaly_classes.begin(), seen_anomaly_classes.end(), cls) !=
         seen_anomaly_classes.end();
}

bool AnomalySplitSpec::is_unseen(int cls) const {
  return std::find(unseen_anomaly_classes.begin(), unseen_anomaly_classes.end(), cls) !=
         unseen_anomaly_classes.end();
}

namespace {

constexpr int kTrainNormals = 4000;
constexpr int kValNormals = 1000;
constexpr int kTrainAnomaliesPerClass = 80;  // 400 total over 5 seen classes
constexpr int kValAnomaliesPerClass = 20;    // 100 total

std::vector<int> shuffled_indices(int n, uint64_t seed) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

json triple(const char* split, int cls, int index) { return json::array({split, cls, index}); }

}  // namespace

json split_manifest(const ClassImageStore& store, int normal_class, uint64_t seed) {
  check_config(store.num_classes() == 10,
               "modified CIFAR-10 requires a 10-class source, got " +
                   std::to_string(store.num_classes()));
  AnomalySplitSpec spec = AnomalySplitSpec::for_normal_class(normal_class, seed);
  check_config(store.train_count(normal_class) >= kTrainNormals + kValNormals,
               "source must provide at least 5000 training images per class");

  json train = json::array(), val = json::array(), test = json::array();

  // 80/20 split of the normal-class training pool
  auto normal_idx = shuffled_indices(store.train_count(normal_class),
                                     substream(seed, "normals", static_cast<uint64_t>(normal_class)));
  for (int i = 0; i < kTrainNormals; ++i) train.push_back(triple("train", normal_class, normal_idx[static_cast<size_t>(i)]));
  for (int i = 0; i < kValNormals; ++i)
    val.push_back(triple("train", normal_class, normal_idx[static_cast<size_t>(kTrainNormals + i)]));

  // stratified anomaly sampling: 80 train + 20 val per seen class
  for (int cls : spec.seen_anomaly_classes) {
    check_config(store.train_count(cls) >= kTrainAnomaliesPerClass + kValAnomaliesPerClass,
                 "source class pool too small");
    auto idx = shuffled_indices(store.train_count(cls),
                                substream(seed, "anomaly", static_cast<uint64_t>(cls)));
    for (int i = 0; i < kTrainAnomaliesPerClass; ++i) train.push_back(triple("train", cls, idx[static_cast<size_t>(i)]));
    for (int i = 0; i < kValAnomaliesPerClass; ++i)
      val.push_back(triple("train", cls, idx[static_cast<size_t>(kTrainAnomaliesPerClass + i)]));
  }

  // testing data keeps every sample
  for (int cls = 0; cls < 10; ++cls)
    for (int i = 0; i < store.test_count(cls); ++i) test.push_back(triple("test", cls, i));

  json m;
  m["dataset"] = "modified-cifar10";
  m["normal_class"] = normal_class;
  m["seed"] = seed;
  m["seen_classes"] = spec.seen_anomaly_classes;
  m["unseen_classes"] = spec.unseen_anomaly_classes;
  m["image_shape"] = {store.height(), store.width(), store.channels()};
  m["partitions"] = {{"train", std::move(train)}, {"val", std::move(val)}, {"test", std::move(test)}};
  return m;
}

DatasetSplit materialize_split(const ClassImageStore& store, const json& manifest) {
  check_config(manifest.at("dataset") == "modified-cifar10", "not a modified-cifar10 manifest");
  AnomalySplitSpec spec = AnomalySplitSpec::for_normal_class(
      manifest.at("normal_class").get<int>(), manifest.value("seed", 0ULL));
  DatasetSplit split;
  split.manifest = manifest;
  std::vector<float> buf(static_cast<size_t>(store.height()) * store.width() * store.channels());
  auto fill = [&](Part& part, const json& triples) {
    part.images = ImageBatch::empty(store.height(), store.width(), store.channels());
    for (const auto& tr : triples) {
      const bool test_split = tr.at(0).get<std::string>() == "test";
      const int cls = tr.at(1).get<int>();
      const int idx = tr.at(2).get<int>();
      store.fetch(test_split, cls, idx, buf.data());
      part.images.append(buf.data());
      part.labels.push_back(cls == spec.normal_class ? 0 : 1);
      part.provenance.push_back(cls);
      part.groups.push_back(cls == spec.normal_class ? eval::Group::NORMAL
                            : spec.is_seen(cls)      ? eval::Group::SEEN_ANOMALY
                                                     : eval::Group::UNSEEN_ANOMALY);
    }
    part.validate();
  };
  fill(split.train, manifest.at("partitions").at("train"));
  fill(split.val, manifest.at("partitions").at("val"));
  fill(split.test, manifest.at("partitions").at("test"));
  return split;
}

DatasetSplit build_modified_cifar10(const ClassImageStore& store, int normal_class,
                                    uint64_t seed) {
  return materialize_split(store, split_manifest(store, normal_class, seed));
}

Part subsample_part(const Part& part, int factor, uint64_t seed) {
  check_config(factor >= 1, "subsample factor must be >= 1");
  part.validate();
  if (factor == 1) return part;
  // bucket by (label, provenance) and keep ceil(count/factor) of each bucket
  std::map<std::pair<int, int>, std::vector<int>> buckets;
  for (int i = 0; i < part.images.n; ++i) {
    int prov = part.provenance.empty() ? 0 : part.provenance[static_cast<size_t>(i)];
    buckets[{part.labels[static_cast<size_t>(i)], prov}].push_back(i);
  }
  std::vector<int> keep;
  for (auto& [key, idx] : buckets) {
    Rng rng(substream(seed, "subsample",
                      static_cast<uint64_t>(key.first * 1000 + key.second)));
    rng.shuffle(idx);
    const size_t take = (idx.size() + static_cast<size_t>(factor) - 1) / static_cast<size_t>(factor);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<long>(take));
  }
  std::sort(keep.begin(), keep.end());
  Part out;
  out.images = ImageBatch::empty(part.images.h, part.images.w, part.images.c);
  for (int i : keep) {
    out.images.append(part.images.image(i));
    out.labels.push_back(part.labels[static_cast<size_t>(i)]);
    if (!part.provenance.empty()) out.provenance.push_back(part.provenance[static_cast<size_t>(i)]);
    if (!part.groups.empty()) out.groups.push_back(part.groups[static_cast<size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {
constexpr double kDegToRad = 0.017453292519943295;

struct Affine {
  // src = M * (dst - center - shift) + center
  double m00, m01, m10, m11, ty, tx;
};

float sample_clamped(const float* img, int h, int w, int c, double fy, double fx, int ch) {
  fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
  fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double wy = fy - y0, wx = fx - x0;
  auto at = [&](int y, int x) {
    return static_cast<double>(img[(static_cast<int64_t>(y) * w + x) * c + ch]);
  };
  return static_cast<float>((1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                            wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1)));
}
}  // namespace

ImageBatch augment(const ImageBatch& images, uint64_t seed, const AugmentParams& params) {
  if (params.is_identity()) return images;
  ImageBatch out = images;
  const int h = images.h, w = images.w, c = images.c;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

#pragma omp parallel for schedule(static)
  for (int i = 0; i < images.n; ++i) {
    Rng rng(substream(seed, "augment", static_cast<uint64_t>(i)));
    const double theta = rng.uniform(-params.rotate_deg, params.rotate_deg) * kDegToRad;
    const double ty = rng.uniform(-params.shift_frac, params.shift_frac) * h;
    const double tx = rng.uniform(-params.shift_frac, params.shift_frac) * w;
    const double shear = rng.uniform(-params.shear_deg, params.shear_deg) * kDegToRad;
    const double zy = 1.0 + rng.uniform(-params.zoom_frac, params.zoom_frac);
    const double zx = 1.0 + rng.uniform(-params.zoom_frac, params.zoom_frac);

    // forward transform: rotate * shear * zoom about center, then shift
    const double r00 = std::cos(theta), r01 = -std::sin(theta);
    const double r10 = std::sin(theta), r11 = std::cos(theta);
    const double s00 = 1.0, s01 = -std::sin(shear), s10 = 0.0, s11 = std::cos(shear);
    double f00 = (r00 * s00 + r01 * s10) * zy, f01 = (r00 * s01 + r01 * s11) * zx;
    double f10 = (r10 * s00 + r11 * s10) * zy, f11 = (r10 * s01 + r11 * s11) * zx;
    const double det = f00 * f11 - f01 * f10;
    Affine a{};
    a.m00 = f11 / det;
    a.m01 = -f01 / det;
    a.m10 = -f10 / det;
    a.m11 = f00 / det;
    a.ty = ty;
    a.tx = tx;

    const float* src = images.image(i);
    float* dst = out.image(i);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = y - cy - a.ty, dx = x - cx - a.tx;
        const double sy = a.m00 * dy + a.m01 * dx + cy;
        const double sx = a.m10 * dy + a.m11 * dx + cx;
        for (int ch = 0; ch < c; ++ch) {
          float v = sample_clamped(src, h, w, c, sy, sx, ch);
          dst[(static_cast<int64_t>(y) * w + x) * c + ch] =
              std::max(0.0f, std::min(1.0f, v));
        }
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Slice datasets

int PatientRecord::anomaly_count() const {
  int n = 0;
  for (const auto& s : slices) n += s.label;
  return n;
}

namespace {

bool parse_slice_name(const std::string& stem, int& index, int& label) {
  const auto us = stem.rfind('_');
  if (us == std::string::npos) return false;
  const std::string tag = stem.substr(us + 1);
  if (tag == "normal")
    label = 0;
  else if (tag == "anomaly")
    label = 1;
  else
    return false;
  try {
    index = std::stoi(stem.substr(0, us));
  } catch (...) {
    return false;
  }
  return true;
}

std::vector<PatientRecord> scan_group(const fs::path& dir, bool is_case) {
  std::vector<PatientRecord> out;
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> patients;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) patients.push_back(e.path());
  std::sort(patients.begin(), patients.end());
  for (const auto& pdir : patients) {
    PatientRecord rec;
    rec.patient_id = pdir.filename().string();
    rec.is_case = is_case;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(pdir))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      int index = 0, label = 0;
      check_config(parse_slice_name(f.stem().string(), index, label),
                   "slice file name '" + f.string() +
                       "' does not follow <index>_<normal|anomaly>.png");
      if (!is_case)
        check_config(label == 0, "control patient slice labeled anomaly: " + f.string());
      if (!img::png_readable(f.string())) throw IoError("unreadable image: " + f.string());
      rec.slices.push_back({f.string(), label});
    }
    if (rec.slices.empty()) {
      std::cerr << "warning: skipping patient with no slices: " << pdir.string() << "\n";
      continue;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::vector<PatientRecord> load_slice_dataset(const std::string& root) {
  check_config(fs::exists(root), "slice dataset root does not exist: " + root);
  std::vector<PatientRecord> records = scan_group(fs::path(root) / "case", true);
  std::vector<PatientRecord> controls = scan_group(fs::path(root) / "control", false);

  // attach controls to their matched case when the id embeds a case id
  for (auto& ctrl : controls) {
    for (const auto& c : records) {
      if (!c.is_case) continue;
      if (ctrl.patient_id.find(c.patient_id) != std::string::npos) {
        ctrl.matched_case_id = c.patient_id;
        break;
      }
    }
  }
  records.insert(records.end(), controls.begin(), controls.end());
  return records;
}

Part SliceLoader::load_part(const std::vector<PatientRecord>& patients,
                            const std::vector<std::string>& patient_ids,
                            eval::Group anomaly_group) const {
  Part part;
  part.images = ImageBatch::empty(h_, w_, 3);
  std::vector<float> buf(static_cast<size_t>(h_) * w_ * 3);
  for (const std::string& id : patient_ids) {
    const PatientRecord* rec = nullptr;
    for (const auto& p : patients)
      if (p.patient_id == id) rec = &p;
    check_config(rec != nullptr, "fold plan names unknown patient '" + id + "'");
    access_log_[id] += static_cast<long>(rec->slices.size());
    for (const auto& slice : rec->slices) {
      img::Image8 im = img::read_png(slice.path);
      if (im.h != h_ || im.w != w_) im = img::resize_bilinear(im, h_, w_);
      for (size_t k = 0; k < buf.size(); ++k) buf[k] = static_cast<float>(im.pixels[k]) / 255.0f;
      part.images.append(buf.data());
      part.labels.push_back(slice.label);
      part.provenance.push_back(slice.label);
      part.groups.push_back(slice.label == 0 ? eval::Group::NORMAL : anomaly_group);
    }
  }
  part.validate();
  return part;
}

// ---------------------------------------------------------------------------
// Double-CV fold planning

namespace {

// Split ids into n_groups contiguous groups of near-equal size (first groups
// take the remainder).
std::vector<std::vector<std::string>> partition_groups(const std::vector<std::string>& ids,
                                                       int n_groups) {
  std::vector<std::vector<std::string>> groups(static_cast<size_t>(n_groups));
  const int base = static_cast<int>(ids.size()) / n_groups;
  const int extra = static_cast<int>(ids.size()) % n_groups;
  size_t pos = 0;
  for (int gi = 0; gi < n_groups; ++gi) {
    const int take = base + (gi < extra ? 1 : 0);
    for (int k = 0; k < take; ++k) groups[static_cast<size_t>(gi)].push_back(ids[pos++]);
  }
  return groups;
}

}  // namespace

FoldPlan plan_double_cv(const std::vector<PatientRecord>& patients, uint64_t seed) {
  std::vector<std::string> case_ids;
  for (const auto& p : patients)
    if (p.is_case) case_ids.push_back(p.patient_id);
  std::sort(case_ids.begin(), case_ids.end());
  check_config(static_cast<int>(case_ids.size()) >= kOuterFolds,
               "double CV requires at least " + std::to_string(kOuterFolds) +
                   " case patients, got " + std::to_string(case_ids.size()));

  // controls travel with their matched case; unmatched controls are assigned
  // round-robin over the sorted case list
  std::map<std::string, std::vector<std::string>> controls_of;
  {
    std::vector<std::string> unmatched;
    for (const auto& p : patients) {
      if (p.is_case) continue;
      if (!p.matched_case_id.empty())
        controls_of[p.matched_case_id].push_back(p.patient_id);
      else
        unmatched.push_back(p.patient_id);
    }
    std::sort(unmatched.begin(), unmatched.end());
    for (size_t i = 0; i < unmatched.size(); ++i)
      controls_of[case_ids[i % case_ids.size()]].push_back(unmatched[i]);
  }

  Rng rng(substream(seed, "fold-plan"));
  std::vector<std::string> shuffled = case_ids;
  rng.shuffle(shuffled);
  auto outer_groups = partition_groups(shuffled, kOuterFolds);

  auto expand = [&](const std::vector<std::string>& cases) {
    std::vector<std::string> ids;
    for (const auto& c : cases) {
      ids.push_back(c);
      auto it = controls_of.find(c);
      if (it != controls_of.end())
        ids.insert(ids.end(), it->second.begin(), it->second.end());
    }
    return ids;
  };

  FoldPlan plan;
  for (int f = 0; f < kOuterFolds; ++f) {
    OuterFold fold;
    fold.outer_val_cases = outer_groups[static_cast<size_t>(f)];
    fold.outer_val_patients = expand(fold.outer_val_cases);

    std::vector<std::string> rest;
    for (int g = 0; g < kOuterFolds; ++g)
      if (g != f)
        rest.insert(rest.end(), outer_groups[static_cast<size_t>(g)].begin(),
                    outer_groups[static_cast<size_t>(g)].end());
    Rng inner_rng(substream(seed, "inner", static_cast<uint64_t>(f)));
    inner_rng.shuffle(rest);
    auto inner_groups = partition_groups(rest, kInnerRotations);
    for (int r = 0; r < kInnerRotations; ++r) {
      InnerRotation rot;
      std::vector<std::string> train_cases;
      for (int g = 0; g < kInnerRotations; ++g) {
        if (g == r) continue;
        train_cases.insert(train_cases.end(), inner_groups[static_cast<size_t>(g)].begin(),
                           inner_groups[static_cast<size_t>(g)].end());
      }
      rot.train_patients = expand(train_cases);
      rot.inner_val_patients = expand(inner_groups[static_cast<size_t>(r)]);
      fold.rotations.push_back(std::move(rot));
    }
    plan.outer.push_back(std::move(fold));
  }
  plan.validate(patients);
  return plan;
}

void FoldPlan::validate(const std::vector<PatientRecord>& patients) const {
  check_config(static_cast<int>(outer.size()) == kOuterFolds, "fold plan must have 5 outer folds");
  std::vector<std::string> all_ids;
  for (const auto& p : patients) all_ids.push_back(p.patient_id);
  std::sort(all_ids.begin(), all_ids.end());
  for (const auto& fold : outer) {
    check_config(static_cast<int>(fold.rotations.size()) == kInnerRotations,
                 "each outer fold must have 4 inner rotations");
    for (const auto& rot : fold.rotations) {
      std::vector<std::string> seen;
      seen.insert(seen.end(), rot.train_patients.begin(), rot.train_patients.end());
      seen.insert(seen.end(), rot.inner_val_patients.begin(), rot.inner_val_patients.end());
      seen.insert(seen.end(), fold.outer_val_patients.begin(), fold.outer_val_patients.end());
      std::sort(seen.begin(), seen.end());
      check_config(std::adjacent_find(seen.begin(), seen.end()) == seen.end(),
                   "fold plan assigns a patient to more than one partition");
      check_config(seen == all_ids, "fold plan does not cover every patient exactly once");
    }
  }
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary store

namespace {
constexpr int kCifarRecord = 3073;  // label byte + 3*1024 pixels (plane order)
}

Cifar10BinStore::Cifar10BinStore(const std::string& dir) {
  auto load_file = [&](const std::string& name, std::vector<std::vector<uint8_t>>& records,
                       std::array<std::vector<int>, 10>& index) {
    const fs::path path = fs::path(dir) / name;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("CIFAR-10 batch file not found: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    check_config(bytes.size() % kCifarRecord == 0,
                 "corrupt CIFAR-10 batch (size not a record multiple): " + path.string());
    for (size_t off = 0; off + kCifarRecord <= bytes.size(); off += kCifarRecord) {
      const int label = bytes[off];
      check_config(label >= 0 && label <= 9, "CIFAR-10 label out of range");
      index[static_cast<size_t>(label)].push_back(static_cast<int>(records.size()));
      records.emplace_back(bytes.begin() + static_cast<long>(off),
                           bytes.begin() + static_cast<long>(off + kCifarRecord));
    }
  };
  for (int b = 1; b <= 5; ++b)
    load_file("data_batch_" + std::to_string(b) + ".bin", train_records_, train_index_);
  load_file("test_batch.bin", test_records_, test_index_);
}

int Cifar10BinStore::train_count(int cls) const {
  return static_cast<int>(train_index_[static_cast<size_t>(cls)].size());
}

int Cifar10BinStore::test_count(int cls) const {
  return static_cast<int>(test_index_[static_cast<size_t>(cls)].size());
}

void Cifar10BinStore::fetch(bool test_split, int cls, int index, float* out) const {
  const auto& idx = test_split ? test_index_[static_cast<size_t>(cls)]
                               : train_index_[static_cast<size_t>(cls)];
  check_config(index >= 0 && index < static_cast<int>(idx.size()), "CIFAR index out of range");
  const auto& rec = (test_split ? test_records_ : train_records_)[static_cast<size_t>(
      idx[static_cast<size_t>(index)])];
  // planes R,G,B of 32x32 -> interleaved HWC
  for (int p = 0; p < 1024; ++p)
    for (int ch = 0; ch < 3; ++ch)
      out[p * 3 + ch] = static_cast<float>(rec[static_cast<size_t>(1 + ch * 1024 + p)]) / 255.0f;
}

}  // namespace cdcm::data
