#pragma once

#include <string>
#include <vector>

#include "cdcm/common.hpp"

namespace cdcm::stats {

// N blocks (datasets/classes) x k treatments (losses); no missing entries.
struct ScoreMatrix {
  std::vector<std::string> blocks;
  std::vector<std::string> treatments;
  std::vector<std::vector<double>> values;  // [block][treatment]

  void validate() const;
  int n_blocks() const { return static_cast<int>(values.size()); }
  int n_treatments() const { return static_cast<int>(treatments.size()); }
};

struct RankSummary {
  std::vector<std::string> treatments;
  std::vector<std::vector<double>> ranks;  // per block, 1 = best, average on ties
  std::vector<double> rank_sums;
  std::vector<double> avg_ranks;
  double statistic = 0.0;  // chi-square Friedman statistic
  double p_value = 1.0;
  bool had_ties = false;
  int n_blocks = 0;

  // filled by bonferroni_dunn
  double alpha = 0.0;
  double critical_difference = 0.0;
  int control = -1;
  std::vector<bool> significant_vs_control;
};

// Within-block average ranks, chi-square Friedman statistic
// 12/(N k (k+1)) * sum R_j^2 - 3 N (k+1), p from the chi-square survival
// function with k-1 degrees of freedom.
RankSummary friedman_test(const ScoreMatrix& m, bool higher_is_better);

// Dunn post-hoc against a control: CD = q * sqrt(k(k+1)/(6N)); treatment j
// differs from the control iff |avgrank_j - avgrank_control| > CD. q is the
// two-sided normal critical value at the Bonferroni-corrected level alpha/k
// (this reproduces the conventional table value 2.576 for k = 5, a = 0.05).
void bonferroni_dunn(RankSummary& r, double alpha, int control);

double critical_difference(int k, int n_blocks, double alpha);

// Plain-text table plus a deterministic SVG rendering of the CD diagram:
// treatments placed at their average rank, a CD bar, and a connector between
// the control and every treatment not significantly different from it.
std::string cd_diagram_text(const RankSummary& r);
std::string cd_diagram_svg(const RankSummary& r);

// Chi-square survival function P(X >= x) with df degrees of freedom.
double chi2_sf(double x, int df);
// Standard normal quantile.
double normal_quantile(double p);

}  // namespace cdcm::stats
