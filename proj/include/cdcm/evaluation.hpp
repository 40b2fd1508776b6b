#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cdcm/losses.hpp"

namespace cdcm::eval {

enum class ScoreKind { DISTANCE, PROBABILITY };
enum class Group { NORMAL = 0, SEEN_ANOMALY = 1, UNSEEN_ANOMALY = 2 };

std::string to_string(Group g);

struct ScoreSet {
  std::vector<double> scores;  // distance to center, or sigmoid probability
  std::vector<int> labels;     // 1 = anomaly
  ScoreKind kind = ScoreKind::DISTANCE;
  std::vector<Group> groups;   // optional per-sample tag; empty = untagged

  void validate() const;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f2 = 0.0;
  double accuracy = 0.0;
  double aucroc = 0.0;
  double threshold = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  bool precision_defined = true;  // flagged false when TP+FP == 0
  bool f2_defined = true;
};

// Decision-threshold rule per loss family: 0.5 for the CE family, the margin
// for cdcm, and the 95th percentile of training-normal distances for deep-sad.
double decision_threshold(losses::LossFamily family, double margin,
                          const std::vector<double>& train_normal_scores);

// Linear-interpolation percentile between order statistics, p in [0,100].
double percentile(std::vector<double> values, double p);

// Predict anomaly iff score > threshold (the boundary itself counts as normal).
std::vector<int> classify(const ScoreSet& scores, double threshold);

// Counts plus precision/recall/accuracy; degenerate denominators are flagged,
// not thrown.
MetricsReport confusion_metrics(const std::vector<int>& preds, const std::vector<int>& labels);

// F_beta = (1+b^2) P R / (b^2 P + R); defined as 0 (flagged) when P = R = 0.
double f_beta(double precision, double recall, double beta, bool* defined = nullptr);

// Rank-based (Mann-Whitney) AUC with tie correction; higher score = more
// anomalous. Throws UndefinedMetricError if only one class is present.
double auc_roc(const ScoreSet& scores);
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

// Full report at a given threshold (AUC included).
MetricsReport evaluate_scores(const ScoreSet& scores, double threshold);

struct HistogramTable {
  double lo = 0.0, hi = 1.0;
  int bins = 50;
  double threshold = 0.0;
  // counts[group][bin]; untagged samples are binned by label (normal /
  // seen-anomaly).
  std::array<std::vector<long>, 3> counts;

  long group_total(int g) const;
  std::string to_csv() const;
  std::string to_svg(const std::string& title, ScoreKind kind) const;
};

// Shared bin range across groups: [0, max score] for distances, [0,1] for
// probabilities.
HistogramTable prediction_histogram(const ScoreSet& scores, int bins, double threshold);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample std (ddof = 1); 0 for a single run
};

struct AggregateReport {
  Aggregate precision, recall, f2, accuracy, aucroc;
  int n_runs = 0;
};

// Mean and sample std per metric. Mean F2 is the mean of per-run F2 values,
// not F2 of the mean precision/recall.
AggregateReport aggregate_runs(const std::vector<MetricsReport>& reports);

Aggregate aggregate_values(const std::vector<double>& values);

}  // namespace cdcm::eval
