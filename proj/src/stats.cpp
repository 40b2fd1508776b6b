#include "cdcm/stats.hpp"

#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace cdcm::stats {

double chi2_sf(double x, int df) {
  check_config(df >= 1, "chi-square df must be >= 1");
  if (x <= 0.0) return 1.0;
  return gsl_cdf_chisq_Q(x, static_cast<double>(df));
}

double normal_quantile(double p) {
  check_config(p > 0.0 && p < 1.0, "normal quantile requires p in (0,1)");
  return gsl_cdf_ugaussian_Pinv(p);
}

void ScoreMatrix::validate() const {
  check_config(values.size() >= 2, "score matrix needs at least 2 blocks");
  check_config(treatments.size() >= 2, "score matrix needs at least 2 treatments");
  check_config(blocks.empty() || blocks.size() == values.size(),
               "block names must be absent or one per row");
  for (const auto& row : values) {
    check_config(row.size() == treatments.size(), "ragged score matrix");
    for (double v : row)
      check_config(std::isfinite(v), "score matrix has a non-finite entry");
  }
}

RankSummary friedman_test(const ScoreMatrix& m, bool higher_is_better) {
  m.validate();
  const int n = m.n_blocks();
  const int k = m.n_treatments();
  RankSummary r;
  r.treatments = m.treatments;
  r.n_blocks = n;
  r.rank_sums.assign(static_cast<size_t>(k), 0.0);

  for (const auto& row : m.values) {
    // rank 1 = best within the block; ties get the average rank
    std::vector<int> order(static_cast<size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return higher_is_better ? row[static_cast<size_t>(a)] > row[static_cast<size_t>(b)]
                              : row[static_cast<size_t>(a)] < row[static_cast<size_t>(b)];
    });
    std::vector<double> ranks(static_cast<size_t>(k), 0.0);
    int i = 0;
    while (i < k) {
      int j = i;
      while (j + 1 < k && row[static_cast<size_t>(order[static_cast<size_t>(j + 1)])] ==
                              row[static_cast<size_t>(order[static_cast<size_t>(i)])])
        ++j;
      if (j > i) r.had_ties = true;
      const double avg = 0.5 * (i + j) + 1.0;
      for (int t = i; t <= j; ++t) ranks[static_cast<size_t>(order[static_cast<size_t>(t)])] = avg;
      i = j + 1;
    }
    for (int t = 0; t < k; ++t) r.rank_sums[static_cast<size_t>(t)] += ranks[static_cast<size_t>(t)];
    r.ranks.push_back(std::move(ranks));
  }

  r.avg_ranks.resize(static_cast<size_t>(k));
  double sum_sq = 0.0;
  for (int t = 0; t < k; ++t) {
    r.avg_ranks[static_cast<size_t>(t)] = r.rank_sums[static_cast<size_t>(t)] / n;
    sum_sq += r.rank_sums[static_cast<size_t>(t)] * r.rank_sums[static_cast<size_t>(t)];
  }
  r.statistic = 12.0 / (static_cast<double>(n) * k * (k + 1)) * sum_sq - 3.0 * n * (k + 1);
  if (r.statistic < 0.0 && r.statistic > -1e-9) r.statistic = 0.0;
  r.p_value = chi2_sf(r.statistic, k - 1);
  return r;
}

double critical_difference(int k, int n_blocks, double alpha) {
  check_config(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
  check_config(k >= 2 && n_blocks >= 1, "need k >= 2 treatments and N >= 1 blocks");
  const double q = normal_quantile(1.0 - alpha / (2.0 * k));
  return q * std::sqrt(static_cast<double>(k) * (k + 1) / (6.0 * n_blocks));
}

void bonferroni_dunn(RankSummary& r, double alpha, int control) {
  check_config(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
  const int k = static_cast<int>(r.avg_ranks.size());
  check_config(k >= 2 && r.n_blocks >= 1, "bonferroni_dunn requires a completed friedman_test");
  check_config(control >= 0 && control < k, "control index out of range");
  r.alpha = alpha;
  r.control = control;
  r.critical_difference = critical_difference(k, r.n_blocks, alpha);
  r.significant_vs_control.assign(static_cast<size_t>(k), false);
  for (int t = 0; t < k; ++t) {
    if (t == control) continue;
    const double gap = std::abs(r.avg_ranks[static_cast<size_t>(t)] -
                                r.avg_ranks[static_cast<size_t>(control)]);
    r.significant_vs_control[static_cast<size_t>(t)] = gap > r.critical_difference;
  }
}

std::string cd_diagram_text(const RankSummary& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "Friedman chi-square = " << r.statistic << ", p = " << std::scientific
     << std::setprecision(3) << r.p_value << std::fixed << std::setprecision(4) << "\n";
  std::vector<int> order(r.treatments.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return r.avg_ranks[static_cast<size_t>(a)] < r.avg_ranks[static_cast<size_t>(b)];
  });
  os << "treatment        avg_rank  rank_sum";
  if (r.control >= 0) os << "  vs_control";
  os << "\n";
  for (int t : order) {
    os << std::left << std::setw(16) << r.treatments[static_cast<size_t>(t)] << " "
       << std::right << std::setw(8) << r.avg_ranks[static_cast<size_t>(t)] << "  "
       << std::setw(8) << r.rank_sums[static_cast<size_t>(t)];
    if (r.control >= 0) {
      if (t == r.control)
        os << "  (control)";
      else
        os << "  " << (r.significant_vs_control[static_cast<size_t>(t)] ? "significant"
                                                                        : "not significant");
    }
    os << "\n";
  }
  if (r.control >= 0) os << "critical difference (alpha=" << r.alpha << ") = "
                         << r.critical_difference << "\n";
  return os.str();
}

std::string cd_diagram_svg(const RankSummary& r) {
  const int k = static_cast<int>(r.treatments.size());
  const int W = 640, ml = 40, mr = 40;
  const double pw = W - ml - mr;
  const double rank_lo = 1.0, rank_hi = static_cast<double>(k);
  auto xpos = [&](double rank) {
    return ml + pw * (rank - rank_lo) / std::max(1e-9, rank_hi - rank_lo);
  };
  std::vector<int> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return r.avg_ranks[static_cast<size_t>(a)] < r.avg_ranks[static_cast<size_t>(b)];
  });
  const int axis_y = 70;
  const int H = axis_y + 30 + 22 * k;
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<line x1='" << ml << "' y1='" << axis_y << "' x2='" << ml + pw << "' y2='" << axis_y
     << "' stroke='black'/>\n";
  for (int t = 0; t < k; ++t) {
    const double x = xpos(static_cast<double>(t + 1));
    os << "<line x1='" << x << "' y1='" << axis_y - 4 << "' x2='" << x << "' y2='" << axis_y + 4
       << "' stroke='black'/>\n";
    os << "<text x='" << x << "' y='" << axis_y - 8 << "' text-anchor='middle' font-size='11'>"
       << (t + 1) << "</text>\n";
  }
  if (r.critical_difference > 0.0) {
    const double x0 = xpos(rank_lo), x1 = xpos(rank_lo + r.critical_difference);
    os << "<line x1='" << x0 << "' y1='20' x2='" << x1 << "' y2='20' stroke='black' "
          "stroke-width='3'/>\n";
    os << "<text x='" << (x0 + x1) / 2 << "' y='14' text-anchor='middle' font-size='11'>CD = "
       << r.critical_difference << "</text>\n";
  }
  int row = 0;
  for (int t : order) {
    const double x = xpos(r.avg_ranks[static_cast<size_t>(t)]);
    const int y = axis_y + 25 + 22 * row++;
    os << "<line x1='" << x << "' y1='" << axis_y << "' x2='" << x << "' y2='" << y
       << "' stroke='gray' stroke-width='1'/>\n";
    os << "<text x='" << x + 4 << "' y='" << y + 4 << "' font-size='12'>"
       << r.treatments[static_cast<size_t>(t)] << " (" << r.avg_ranks[static_cast<size_t>(t)]
       << ")</text>\n";
  }
  // connector between the control and treatments within the critical difference
  if (r.control >= 0) {
    double lo = r.avg_ranks[static_cast<size_t>(r.control)];
    double hi = lo;
    for (int t = 0; t < k; ++t)
      if (t == r.control || !r.significant_vs_control[static_cast<size_t>(t)]) {
        lo = std::min(lo, r.avg_ranks[static_cast<size_t>(t)]);
        hi = std::max(hi, r.avg_ranks[static_cast<size_t>(t)]);
      }
    os << "<line x1='" << xpos(lo) - 3 << "' y1='" << axis_y + 10 << "' x2='" << xpos(hi) + 3
       << "' y2='" << axis_y + 10 << "' stroke='black' stroke-width='4'/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace cdcm::stats
