#include <cstdio>
#include <sstream>

#include "cdcm/stats.hpp"
#include "cli_common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::cli {

namespace {

struct CompareOpts {
  std::string input;
  std::string control;
  double alpha = 0.05;
  bool lower_is_better = false;
  std::string out = "compare";
};

// CSV with a header row (block,<treatment...>) and one row per block.
stats::ScoreMatrix parse_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  stats::ScoreMatrix m;
  std::string line;
  std::vector<std::string> missing;
  int row_no = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    ++row_no;
    if (m.treatments.empty()) {
      check_config(cells.size() >= 3, "matrix CSV needs a block column and >= 2 treatments");
      m.treatments.assign(cells.begin() + 1, cells.end());
      continue;
    }
    check_config(cells.size() == m.treatments.size() + 1,
                 "row " + std::to_string(row_no) + " has " + std::to_string(cells.size() - 1) +
                     " cells, expected " + std::to_string(m.treatments.size()));
    m.blocks.push_back(cells[0]);
    std::vector<double> row;
    for (size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        missing.push_back("row '" + cells[0] + "' column '" + m.treatments[c - 1] + "'");
        row.push_back(0.0);
        continue;
      }
      try {
        row.push_back(std::stod(cells[c]));
      } catch (...) {
        missing.push_back("row '" + cells[0] + "' column '" + m.treatments[c - 1] + "'");
        row.push_back(0.0);
      }
    }
    m.values.push_back(std::move(row));
  }
  if (!missing.empty()) {
    std::string msg = "score matrix has missing cells:";
    for (const auto& s : missing) msg += " " + s + ";";
    throw ConfigError(msg);
  }
  return m;
}

void run(const CompareOpts& o) {
  stats::ScoreMatrix m = parse_matrix_csv(o.input);
  stats::RankSummary r = stats::friedman_test(m, !o.lower_is_better);

  int control = 0;
  if (!o.control.empty()) {
    auto it = std::find(m.treatments.begin(), m.treatments.end(), o.control);
    check_config(it != m.treatments.end(), "control '" + o.control + "' not in treatments");
    control = static_cast<int>(it - m.treatments.begin());
  }
  stats::bonferroni_dunn(r, o.alpha, control);

  fs::create_directories(o.out);
  json summary{{"statistic", r.statistic},
               {"p_value", r.p_value},
               {"n_blocks", r.n_blocks},
               {"treatments", r.treatments},
               {"rank_sums", r.rank_sums},
               {"avg_ranks", r.avg_ranks},
               {"alpha", r.alpha},
               {"critical_difference", r.critical_difference},
               {"control", r.treatments[static_cast<size_t>(r.control)]},
               {"significant_vs_control", r.significant_vs_control},
               {"had_ties", r.had_ties}};
  write_text(fs::path(o.out) / "summary.json", summary.dump(2) + "\n");
  write_text(fs::path(o.out) / "cd_diagram.svg", stats::cd_diagram_svg(r));
  write_text(fs::path(o.out) / "ranks.txt", stats::cd_diagram_text(r));
  std::fputs(stats::cd_diagram_text(r).c_str(), stdout);
}

}  // namespace

void register_compare(CLI::App& app) {
  auto opts = std::make_shared<CompareOpts>();
  CLI::App* sub =
      app.add_subcommand("compare", "Friedman test and Bonferroni-Dunn critical differences");
  sub->set_config("--config");
  sub->add_option("--input", opts->input, "CSV: block rows x treatment columns")->required();
  sub->add_option("--control", opts->control, "control treatment (default: first column)");
  sub->add_option("--alpha", opts->alpha, "significance level");
  sub->add_flag("--lower-is-better", opts->lower_is_better, "rank ascending values as better");
  sub->add_option("--out", opts->out, "output directory");
  sub->callback([opts] { run(*opts); });
}

}  // namespace cdcm::cli
