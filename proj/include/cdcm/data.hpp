#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdcm/evaluation.hpp"
#include "cdcm/tensor.hpp"

namespace cdcm::data {

// Rank-4 image batch, NHWC, values in [0,1]. Stored as float; converted to
// double tensors per mini-batch.
struct ImageBatch {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<float> pixels;

  int64_t image_elems() const { return static_cast<int64_t>(h) * w * c; }
  const float* image(int i) const { return pixels.data() + i * image_elems(); }
  float* image(int i) { return pixels.data() + i * image_elems(); }
  static ImageBatch empty(int h, int w, int c) { return ImageBatch{0, h, w, c, {}}; }
  void append(const float* img);
  nn::Tensor to_tensor(const std::vector<int>& indices) const;
  nn::Tensor to_tensor() const;
};

struct Part {
  ImageBatch images;
  std::vector<int> labels;             // 1 = anomaly
  std::vector<int> provenance;         // source class id (cifar) or group code (slices)
  std::vector<eval::Group> groups;     // normal / seen / unseen tag per sample

  void validate() const;
};

struct DatasetSplit {
  Part train, val, test;
  nlohmann::json manifest;
};

// Seen/unseen partition of the 10 class ids around a normal class, following
// the cyclic pattern: normal k -> seen k+1..k+5, unseen k+6..k+9 (mod 10).
struct AnomalySplitSpec {
  int normal_class = 8;
  std::array<int, 5> seen_anomaly_classes{};
  std::array<int, 4> unseen_anomaly_classes{};
  int imbalance_percent = 10;  // anomalies = 10% of normals in train/val
  uint64_t seed = 0;

  static AnomalySplitSpec for_normal_class(int normal_class, uint64_t seed = 0);
  bool is_seen(int cls) const;
  bool is_unseen(int cls) const;
};

// Source of class-indexed images (real CIFAR-10 binaries or the synthetic
// stand-in): fixed-size images, per-class train and test pools.
class ClassImageStore {
public:
  virtual ~ClassImageStore() = default;
  virtual int num_classes() const = 0;
  virtual int train_count(int cls) const = 0;
  virtual int test_count(int cls) const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  virtual int channels() const = 0;
  // Writes h*w*c floats in [0,1].
  virtual void fetch(bool test_split, int cls, int index, float* out) const = 0;
};

// Imbalanced one-class benchmark split:
//   train 4000 normal + 400 anomaly (80 per seen class)
//   val   1000 normal + 100 anomaly (20 per seen class)
//   test  all 1000 normal-class test images + all 9000 other test images.
// The returned manifest lists (source split, class id, sample index) triples
// so the split is reproducible without re-shipping pixels.
DatasetSplit build_modified_cifar10(const ClassImageStore& store, int normal_class,
                                    uint64_t seed);

nlohmann::json split_manifest(const ClassImageStore& store, int normal_class, uint64_t seed);
DatasetSplit materialize_split(const ClassImageStore& store, const nlohmann::json& manifest);

// Stratified 1-in-factor subsample (per label and provenance class), for
// reduced-demand probes. Selection is deterministic given the seed.
Part subsample_part(const Part& part, int factor, uint64_t seed);

// Rotate / shift / shear / zoom, sampled per image from symmetric ranges.
struct AugmentParams {
  double rotate_deg = 0.0;
  double shift_frac = 0.0;
  double shear_deg = 0.0;
  double zoom_frac = 0.0;

  bool is_identity() const {
    return rotate_deg == 0.0 && shift_frac == 0.0 && shear_deg == 0.0 && zoom_frac == 0.0;
  }
  // Artifact defaults for the four augmentations named in the training recipe
  // (magnitudes are not stated there; these are recorded defaults).
  static AugmentParams defaults() { return {15.0, 0.1, 10.0, 0.1}; }
};

// Each image independently transformed; output shape = input shape; values
// clipped to [0,1]; deterministic given (seed, image index). All-zero params
// return the input bit-exactly.
ImageBatch augment(const ImageBatch& images, uint64_t seed, const AugmentParams& params);

// ---------------------------------------------------------------------------
// Patient slice datasets (directory layout:
//   root/{case|control}/<patient_id>/<slice_index>_<normal|anomaly>.png)

struct SliceRef {
  std::string path;
  int label = 0;  // 1 = anomaly
};

struct PatientRecord {
  std::string patient_id;
  bool is_case = false;
  std::string matched_case_id;  // empty if unknown
  std::vector<SliceRef> slices;

  int anomaly_count() const;
};

// Scans the directory tree, validates labels and PNG readability (header
// probe), and skips empty patients with a warning. Control patients must be
// all-normal.
std::vector<PatientRecord> load_slice_dataset(const std::string& root);

// Decodes slices to a Part (resized to target size, scaled to [0,1]) and
// keeps a per-patient access log so leakage audits can assert which patients
// were ever materialized.
class SliceLoader {
public:
  SliceLoader(int target_h = 256, int target_w = 256) : h_(target_h), w_(target_w) {}

  Part load_part(const std::vector<PatientRecord>& patients,
                 const std::vector<std::string>& patient_ids, eval::Group anomaly_group) const;

  const std::map<std::string, long>& access_log() const { return access_log_; }
  void reset_log() { access_log_.clear(); }

private:
  int h_, w_;
  mutable std::map<std::string, long> access_log_;
};

// ---------------------------------------------------------------------------
// Patient-level 5-fold double cross-validation plan. Outer folds rotate over
// case patients; matched controls travel with their case. Every patient is in
// exactly one of {train, inner-val, outer-val} for each (outer, inner) pair.

struct InnerRotation {
  std::vector<std::string> train_patients;
  std::vector<std::string> inner_val_patients;
};

struct OuterFold {
  std::vector<std::string> outer_val_cases;
  std::vector<std::string> outer_val_patients;  // cases + attached controls
  std::vector<InnerRotation> rotations;         // 4 per outer fold
};

struct FoldPlan {
  std::vector<OuterFold> outer;  // 5

  void validate(const std::vector<PatientRecord>& patients) const;
};

inline constexpr int kOuterFolds = 5;
inline constexpr int kInnerRotations = 4;

FoldPlan plan_double_cv(const std::vector<PatientRecord>& patients, uint64_t seed);

// ---------------------------------------------------------------------------
// Stores

// Standard CIFAR-10 binary format (data_batch_*.bin / test_batch.bin).
class Cifar10BinStore : public ClassImageStore {
public:
  explicit Cifar10BinStore(const std::string& dir);
  int num_classes() const override { return 10; }
  int train_count(int cls) const override;
  int test_count(int cls) const override;
  int height() const override { return 32; }
  int width() const override { return 32; }
  int channels() const override { return 3; }
  void fetch(bool test_split, int cls, int index, float* out) const override;

private:
  std::vector<std::vector<uint8_t>> train_records_, test_records_;  // raw 3073-byte records
  std::array<std::vector<int>, 10> train_index_, test_index_;
};

// Procedural 10-class stand-in with CIFAR-like counts; each class is a
// distinct texture family with per-image variation. Pure function of
// (split, class, index, seed).
class SyntheticClassStore : public ClassImageStore {
public:
  explicit SyntheticClassStore(uint64_t seed, int train_per_class = 5000,
                               int test_per_class = 1000)
      : seed_(seed), train_per_class_(train_per_class), test_per_class_(test_per_class) {}
  int num_classes() const override { return 10; }
  int train_count(int) const override { return train_per_class_; }
  int test_count(int) const override { return test_per_class_; }
  int height() const override { return 32; }
  int width() const override { return 32; }
  int channels() const override { return 3; }
  void fetch(bool test_split, int cls, int index, float* out) const override;

private:
  uint64_t seed_;
  int train_per_class_, test_per_class_;
};

}  // namespace cdcm::data
