#include "cdcm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cdcm::eval {

std::string to_string(Group g) {
  switch (g) {
    case Group::NORMAL: return "normal";
    case Group::SEEN_ANOMALY: return "seen_anomaly";
    case Group::UNSEEN_ANOMALY: return "unseen_anomaly";
  }
  return "?";
}

void ScoreSet::validate() const {
  check_config(scores.size() == labels.size(), "score and label vectors differ in length");
  check_config(groups.empty() || groups.size() == scores.size(),
               "group tags must be absent or per-sample");
  if (kind == ScoreKind::DISTANCE)
    for (double s : scores) check_config(s >= 0.0, "distance scores must be nonnegative");
  if (kind == ScoreKind::PROBABILITY)
    for (double s : scores)
      check_config(s >= 0.0 && s <= 1.0, "probability scores must be in [0,1]");
}

double percentile(std::vector<double> values, double p) {
  check_config(!values.empty(), "percentile of empty vector");
  check_config(p >= 0.0 && p <= 100.0, "percentile must be in [0,100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const size_t lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double decision_threshold(losses::LossFamily family, double margin,
                          const std::vector<double>& train_normal_scores) {
  switch (family) {
    case losses::LossFamily::CDCM:
      check_config(margin > 0.0, "cdcm threshold requires a positive margin");
      return margin;
    case losses::LossFamily::DEEP_SAD:
      if (train_normal_scores.empty())
        throw ConfigError("deep-sad threshold requires training-normal distances");
      return percentile(train_normal_scores, 95.0);
    case losses::LossFamily::BCE:
    case losses::LossFamily::WBCE:
    case losses::LossFamily::FOCAL:
      return 0.5;
  }
  throw ConfigError("unknown loss family");
}

std::vector<int> classify(const ScoreSet& scores, double threshold) {
  scores.validate();
  check_config(std::isfinite(threshold), "threshold must be finite");
  std::vector<int> preds(scores.scores.size());
  for (size_t i = 0; i < preds.size(); ++i) preds[i] = scores.scores[i] > threshold ? 1 : 0;
  return preds;
}

MetricsReport confusion_metrics(const std::vector<int>& preds, const std::vector<int>& labels) {
  check_config(preds.size() == labels.size(), "prediction and label vectors differ in length");
  if (preds.empty()) throw EmptyBatchError("confusion_metrics on empty input");
  MetricsReport r;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 1)
      (preds[i] == 1 ? r.tp : r.fn)++;
    else
      (preds[i] == 1 ? r.fp : r.tn)++;
  }
  const long total = r.tp + r.fp + r.tn + r.fn;
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(total);
  if (r.tp + r.fp > 0) {
    r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  } else {
    r.precision = 0.0;
    r.precision_defined = false;
  }
  r.recall = (r.tp + r.fn > 0)
                 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn)
                 : 0.0;
  r.f2 = f_beta(r.precision, r.recall, 2.0, &r.f2_defined);
  if (!r.precision_defined) r.f2_defined = false;
  return r;
}

double f_beta(double precision, double recall, double beta, bool* defined) {
  check_config(precision >= 0.0 && precision <= 1.0 && recall >= 0.0 && recall <= 1.0,
               "precision and recall must be in [0,1]");
  check_config(beta > 0.0, "beta must be positive");
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) {
    if (defined) *defined = false;
    return 0.0;
  }
  if (defined) *defined = true;
  return (1.0 + b2) * precision * recall / denom;
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_config(scores.size() == labels.size(), "score and label vectors differ in length");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) {
    check_config(y == 0 || y == 1, "labels must be 0 or 1");
    n_pos += static_cast<size_t>(y);
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetricError("AUC undefined: only one class present");

  // average ranks with tie correction
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_roc(const ScoreSet& scores) {
  scores.validate();
  return auc_roc(scores.scores, scores.labels);
}

MetricsReport evaluate_scores(const ScoreSet& scores, double threshold) {
  MetricsReport r = confusion_metrics(classify(scores, threshold), scores.labels);
  r.threshold = threshold;
  r.aucroc = auc_roc(scores);
  return r;
}

long HistogramTable::group_total(int g) const {
  long s = 0;
  for (long c : counts[static_cast<size_t>(g)]) s += c;
  return s;
}

HistogramTable prediction_histogram(const ScoreSet& scores, int bins, double threshold) {
  scores.validate();
  check_config(bins >= 2, "histogram needs at least 2 bins");
  HistogramTable h;
  h.bins = bins;
  h.threshold = threshold;
  h.lo = 0.0;
  if (scores.kind == ScoreKind::PROBABILITY) {
    h.hi = 1.0;
  } else {
    h.hi = 0.0;
    for (double s : scores.scores) h.hi = std::max(h.hi, s);
    if (h.hi <= 0.0) h.hi = 1.0;
  }
  for (auto& c : h.counts) c.assign(static_cast<size_t>(bins), 0);
  const double width = (h.hi - h.lo) / bins;
  for (size_t i = 0; i < scores.scores.size(); ++i) {
    int b = static_cast<int>((scores.scores[i] - h.lo) / width);
    b = std::clamp(b, 0, bins - 1);
    Group g = scores.groups.empty()
                  ? (scores.labels[i] == 1 ? Group::SEEN_ANOMALY : Group::NORMAL)
                  : scores.groups[i];
    h.counts[static_cast<size_t>(g)][static_cast<size_t>(b)]++;
  }
  return h;
}

std::string HistogramTable::to_csv() const {
  std::ostringstream os;
  os << "bin_lo,bin_hi,normal,seen_anomaly,unseen_anomaly\n";
  const double width = (hi - lo) / bins;
  os.precision(10);
  for (int b = 0; b < bins; ++b) {
    os << lo + b * width << "," << lo + (b + 1) * width << "," << counts[0][static_cast<size_t>(b)]
       << "," << counts[1][static_cast<size_t>(b)] << "," << counts[2][static_cast<size_t>(b)]
       << "\n";
  }
  os << "# threshold," << threshold << "\n";
  return os.str();
}

std::string HistogramTable::to_svg(const std::string& title, ScoreKind kind) const {
  const int W = 640, H = 360, ml = 50, mr = 15, mt = 30, mb = 35;
  const double pw = W - ml - mr, ph = H - mt - mb;
  long maxc = 1;
  for (const auto& g : counts)
    for (long c : g) maxc = std::max(maxc, c);
  const char* cols[3] = {"#4878cf", "#d65f5f", "#ee854a"};
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='18' text-anchor='middle' font-size='13'>" << title
     << "</text>\n";
  const double bw = pw / bins;
  for (int g = 0; g < 3; ++g) {
    if (group_total(g) == 0) continue;
    for (int b = 0; b < bins; ++b) {
      long c = counts[static_cast<size_t>(g)][static_cast<size_t>(b)];
      if (c == 0) continue;
      double bh = ph * static_cast<double>(c) / static_cast<double>(maxc);
      os << "<rect x='" << ml + b * bw + g * bw / 3.0 << "' y='" << mt + ph - bh << "' width='"
         << bw / 3.0 << "' height='" << bh << "' fill='" << cols[g] << "' fill-opacity='0.8'/>\n";
    }
  }
  // decision threshold marker
  if (threshold >= lo && threshold <= hi) {
    double tx = ml + pw * (threshold - lo) / (hi - lo);
    os << "<line x1='" << tx << "' y1='" << mt << "' x2='" << tx << "' y2='" << mt + ph
       << "' stroke='black' stroke-width='2'/>\n";
  }
  os << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='" << mt + ph
     << "' stroke='black'/>\n";
  os << "<text x='" << ml << "' y='" << H - 10 << "' font-size='11'>" << lo << "</text>\n";
  os << "<text x='" << ml + pw - 20 << "' y='" << H - 10 << "' font-size='11'>" << hi
     << "</text>\n";
  os << "<text x='" << W / 2 << "' y='" << H - 10 << "' text-anchor='middle' font-size='11'>"
     << (kind == ScoreKind::DISTANCE ? "distance to center" : "predicted probability")
     << "</text>\n";
  int ly = mt + 8;
  const char* names[3] = {"normal", "seen anomaly", "unseen anomaly"};
  for (int g = 0; g < 3; ++g) {
    if (group_total(g) == 0) continue;
    os << "<rect x='" << W - 150 << "' y='" << ly - 8 << "' width='10' height='10' fill='"
       << cols[g] << "'/>\n";
    os << "<text x='" << W - 135 << "' y='" << ly << "' font-size='11'>" << names[g]
       << "</text>\n";
    ly += 16;
  }
  os << "</svg>\n";
  return os.str();
}

Aggregate aggregate_values(const std::vector<double>& values) {
  Aggregate a;
  const size_t n = values.size();
  if (n == 0) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return a;
}

AggregateReport aggregate_runs(const std::vector<MetricsReport>& reports) {
  check_config(!reports.empty(), "aggregate_runs requires at least one report");
  AggregateReport agg;
  agg.n_runs = static_cast<int>(reports.size());
  auto collect = [&](auto field) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const auto& r : reports) v.push_back(field(r));
    return aggregate_values(v);
  };
  agg.precision = collect([](const MetricsReport& r) { return r.precision; });
  agg.recall = collect([](const MetricsReport& r) { return r.recall; });
  agg.f2 = collect([](const MetricsReport& r) { return r.f2; });
  agg.accuracy = collect([](const MetricsReport& r) { return r.accuracy; });
  agg.aucroc = collect([](const MetricsReport& r) { return r.aucroc; });
  return agg;
}

}  // namespace cdcm::eval
