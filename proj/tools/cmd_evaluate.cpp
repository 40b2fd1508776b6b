#include <cstdio>
#include <sstream>

#include "cdcm/checkpoint.hpp"
#include "cli_common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::cli {

namespace {

struct EvaluateOpts {
  std::string run;
  std::string splits = "test";
  int bins = 50;
  std::string out;
  SourceOpts source;
  bool source_overridden = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    check_config(item == "train" || item == "val" || item == "test",
                 "--splits entries must be train, val or test");
    out.push_back(item);
  }
  check_config(!out.empty(), "--splits is empty");
  return out;
}

void run(const EvaluateOpts& o) {
  const fs::path run_dir(o.run);
  check_config(fs::exists(run_dir / "config.json"),
               "run directory has no config.json: " + run_dir.string());
  json cfg = read_json(run_dir / "config.json");
  check_config(cfg.at("dataset").at("kind") == "manifest",
               "evaluate works on manifest-dataset runs; double-CV runs already carry per-fold "
               "outer metrics in result.json");

  losses::LossConfig lcfg = losses::LossConfig::from_json(cfg.at("loss"));
  const bool metric = losses::is_metric_family(lcfg.family);
  const int subsample = cfg.value("subsample", 1);
  const uint64_t seed = cfg.at("train").value("seed", 0ULL);

  json manifest = read_json(cfg.at("dataset").at("path").get<std::string>());
  json src = o.source_overridden || !manifest.contains("source") ? source_json(o.source)
                                                                 : manifest.at("source");
  auto store = make_store(src);
  data::DatasetSplit split = data::materialize_split(*store, manifest);
  if (subsample > 1) {
    split.train = data::subsample_part(split.train, subsample, seed);
    split.val = data::subsample_part(split.val, subsample, seed + 1);
    split.test = data::subsample_part(split.test, subsample, seed + 2);
  }

  // all checkpoint_seed*.ckpt files in the run directory
  std::vector<fs::path> checkpoints;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.path().extension() == ".ckpt") checkpoints.push_back(e.path());
  std::sort(checkpoints.begin(), checkpoints.end());
  check_config(!checkpoints.empty(), "no checkpoint found in " + run_dir.string());

  const fs::path out_dir = o.out.empty() ? run_dir : fs::path(o.out);
  fs::create_directories(out_dir);

  std::string csv = "id,split,threshold,tp,fp,tn,fn,precision,recall,f2,accuracy,aucroc\n";
  json all = json::array();
  for (const auto& ckpt_path : checkpoints) {
    models::Network net = train::load_checkpoint(ckpt_path.string());
    const std::string id = ckpt_path.stem().string();

    double threshold;
    if (lcfg.family == losses::LossFamily::DEEP_SAD) {
      // recomputed from training normals, as the rule requires
      eval::ScoreSet train_scores = train::score_part(net, split.train, lcfg);
      std::vector<double> normals;
      for (size_t i = 0; i < train_scores.scores.size(); ++i)
        if (train_scores.labels[i] == 0) normals.push_back(train_scores.scores[i]);
      threshold = eval::decision_threshold(lcfg.family, lcfg.margin, normals);
      std::printf("%s: deep-sad 95th-percentile threshold = %.6f\n", id.c_str(), threshold);
    } else {
      threshold = eval::decision_threshold(lcfg.family, lcfg.margin, {});
    }

    for (const std::string& split_name : split_list(o.splits)) {
      const data::Part& part = split_name == "train" ? split.train
                               : split_name == "val" ? split.val
                                                     : split.test;
      eval::ScoreSet scores = train::score_part(net, part, lcfg);
      eval::MetricsReport m = eval::evaluate_scores(scores, threshold);
      std::ostringstream row;
      row.precision(10);
      row << id << "," << split_name << "," << m.threshold << "," << m.tp << "," << m.fp << ","
          << m.tn << "," << m.fn << "," << m.precision << "," << m.recall << "," << m.f2 << ","
          << m.accuracy << "," << m.aucroc << "\n";
      csv += row.str();
      all.push_back(json{{"id", id},
                         {"split", split_name},
                         {"threshold", m.threshold},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f2", m.f2},
                         {"accuracy", m.accuracy},
                         {"aucroc", m.aucroc},
                         {"tp", m.tp},
                         {"fp", m.fp},
                         {"tn", m.tn},
                         {"fn", m.fn}});
      eval::HistogramTable h = eval::prediction_histogram(scores, o.bins, threshold);
      write_text(out_dir / ("hist_" + split_name + "_" + id + ".csv"), h.to_csv());
      write_text(out_dir / ("hist_" + split_name + "_" + id + ".svg"),
                 h.to_svg(split_name + " predictions (" + id + ")", scores.kind));
      std::printf("%s %s: P %.4f R %.4f F2 %.4f acc %.4f AUC %.4f (threshold %.4f)\n",
                  id.c_str(), split_name.c_str(), m.precision, m.recall, m.f2, m.accuracy,
                  m.aucroc, threshold);
    }
  }
  write_text(out_dir / "metrics.csv", csv);
  write_text(out_dir / "metrics.json", all.dump(2) + "\n");
}

}  // namespace

void register_evaluate(CLI::App& app) {
  auto opts = std::make_shared<EvaluateOpts>();
  CLI::App* sub = app.add_subcommand("evaluate", "score checkpoints and emit metrics/histograms");
  sub->set_config("--config");
  sub->add_option("--run", opts->run, "run directory from train")->required();
  sub->add_option("--splits", opts->splits, "comma list of train,val,test");
  sub->add_option("--bins", opts->bins, "histogram bins");
  sub->add_option("--out", opts->out, "output directory (default: run directory)");
  sub->add_option("--source", opts->source.kind, "override manifest image source")
      ->check(CLI::IsMember({"synthetic", "cifar10-bin"}))
      ->each([opts](const std::string&) { opts->source_overridden = true; });
  sub->add_option("--source-dir", opts->source.dir, "CIFAR-10 .bin directory");
  sub->add_option("--source-seed", opts->source.seed, "synthetic source seed");
  sub->callback([opts] { run(*opts); });
}

}  // namespace cdcm::cli
