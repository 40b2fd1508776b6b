#include <cstdio>
#include <sstream>

#include "cli_common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::cli {

namespace {

struct ReportOpts {
  std::vector<std::string> inputs;
  std::string out = "report";
};

// Accepts metrics.json files from evaluate (arrays of per-run rows) or single
// metric objects; aggregates mean +- std per metric.
void run(const ReportOpts& o) {
  check_config(!o.inputs.empty(), "report needs at least one --inputs file");
  std::vector<eval::MetricsReport> rows;
  for (const auto& path : o.inputs) {
    json j = read_json(path);
    auto push = [&](const json& row) {
      eval::MetricsReport m;
      m.precision = row.at("precision").get<double>();
      m.recall = row.at("recall").get<double>();
      m.f2 = row.at("f2").get<double>();
      m.accuracy = row.at("accuracy").get<double>();
      m.aucroc = row.at("aucroc").get<double>();
      rows.push_back(m);
    };
    if (j.is_array())
      for (const auto& row : j) push(row);
    else
      push(j);
  }
  eval::AggregateReport agg = eval::aggregate_runs(rows);

  fs::create_directories(o.out);
  auto entry = [](const eval::Aggregate& a) {
    return json{{"mean", a.mean}, {"std", a.stddev}};
  };
  json out{{"n_runs", agg.n_runs},        {"precision", entry(agg.precision)},
           {"recall", entry(agg.recall)}, {"f2", entry(agg.f2)},
           {"accuracy", entry(agg.accuracy)}, {"aucroc", entry(agg.aucroc)}};
  write_text(fs::path(o.out) / "aggregate.json", out.dump(2) + "\n");

  std::ostringstream csv;
  csv.precision(10);
  csv << "metric,mean,std\n";
  csv << "precision," << agg.precision.mean << "," << agg.precision.stddev << "\n";
  csv << "recall," << agg.recall.mean << "," << agg.recall.stddev << "\n";
  csv << "f2," << agg.f2.mean << "," << agg.f2.stddev << "\n";
  csv << "accuracy," << agg.accuracy.mean << "," << agg.accuracy.stddev << "\n";
  csv << "aucroc," << agg.aucroc.mean << "," << agg.aucroc.stddev << "\n";
  write_text(fs::path(o.out) / "aggregate.csv", csv.str());

  std::printf("aggregated %d runs:\n", agg.n_runs);
  std::printf("  precision %.4f +- %.4f\n", agg.precision.mean, agg.precision.stddev);
  std::printf("  recall    %.4f +- %.4f\n", agg.recall.mean, agg.recall.stddev);
  std::printf("  f2        %.4f +- %.4f\n", agg.f2.mean, agg.f2.stddev);
  std::printf("  accuracy  %.4f +- %.4f\n", agg.accuracy.mean, agg.accuracy.stddev);
  std::printf("  aucroc    %.4f +- %.4f\n", agg.aucroc.mean, agg.aucroc.stddev);
}

}  // namespace

void register_report(CLI::App& app) {
  auto opts = std::make_shared<ReportOpts>();
  CLI::App* sub = app.add_subcommand("report", "aggregate run metrics into mean +- std tables");
  sub->set_config("--config");
  sub->add_option("--inputs", opts->inputs, "metrics JSON files")->delimiter(',')->required();
  sub->add_option("--out", opts->out, "output directory");
  sub->callback([opts] { run(*opts); });
}

}  // namespace cdcm::cli
