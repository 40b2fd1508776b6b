#include <cstdio>
#include <sstream>

#include "cdcm/checkpoint.hpp"
#include "cli_common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::cli {

namespace {

struct TrainOpts {
  std::string manifest;
  std::string slice_root;
  int subsample = 1;
  SourceOpts source;
  bool source_overridden = false;

  std::string model = "lenet";
  std::string head;  // default derived from the loss family
  int latent_dim = -1;
  int kernel_size = -1;
  std::vector<int> block_widths;
  std::vector<int> mlp_widths;
  double dropout = -1.0;
  int input_size = -1;
  int se_reduction = -1;
  std::vector<int> dilations;

  std::string loss = "cdcm";
  double margin = 5.0;
  double alpha = 5.0;
  double eta = 5.0;
  double pos_weight = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  std::string center = "ones";

  train::TrainConfig tcfg;
  bool no_augment = false;
  std::string cv = "none";
  std::string device = "cpu";
  int threads = 0;
  bool verbose = false;
  std::string out = "run";
};

std::string metrics_csv_header() {
  return "id,split,threshold,tp,fp,tn,fn,precision,recall,f2,accuracy,aucroc\n";
}

std::string metrics_csv_row(const std::string& id, const std::string& split,
                            const eval::MetricsReport& m) {
  std::ostringstream os;
  os.precision(10);
  os << id << "," << split << "," << m.threshold << "," << m.tp << "," << m.fp << "," << m.tn
     << "," << m.fn << "," << m.precision << "," << m.recall << "," << m.f2 << "," << m.accuracy
     << "," << m.aucroc << "\n";
  return os.str();
}

json metrics_json(const eval::MetricsReport& m) {
  return json{{"threshold", m.threshold},
              {"tp", m.tp},
              {"fp", m.fp},
              {"tn", m.tn},
              {"fn", m.fn},
              {"precision", m.precision},
              {"precision_defined", m.precision_defined},
              {"recall", m.recall},
              {"f2", m.f2},
              {"accuracy", m.accuracy},
              {"aucroc", m.aucroc}};
}

models::ModelConfig build_model_config(const TrainOpts& o, losses::LossFamily family) {
  const models::Head head = o.head.empty()
                                ? (losses::is_metric_family(family)
                                       ? models::Head::METRIC
                                       : models::Head::SIGMOID_CLASSIFIER)
                                : models::head_from_string(o.head);
  const bool lenet =
      models::model_family_from_string(o.model) == models::ModelFamily::LENET_TYPE;
  models::ModelConfig cfg =
      lenet ? models::ModelConfig::lenet(head) : models::ModelConfig::custom_se_dilated(head);
  if (o.latent_dim > 0) cfg.latent_dim = o.latent_dim;
  if (o.kernel_size > 0) cfg.kernel_size = o.kernel_size;
  if (!o.block_widths.empty()) cfg.block_widths = o.block_widths;
  if (!o.mlp_widths.empty()) cfg.mlp_widths = o.mlp_widths;
  if (o.dropout >= 0.0) cfg.dropout = o.dropout;
  if (o.input_size > 0) cfg.input_h = cfg.input_w = o.input_size;
  if (o.se_reduction > 0) cfg.se_reduction = o.se_reduction;
  if (!o.dilations.empty()) {
    check_config(o.dilations.size() == 3, "--dilations needs exactly 3 values");
    std::copy(o.dilations.begin(), o.dilations.end(), cfg.dilation_rates.begin());
  }
  cfg.validate();
  return cfg;
}

losses::LossConfig build_loss_config(const TrainOpts& o, int latent_dim) {
  losses::LossConfig cfg;
  cfg.family = losses::loss_family_from_string(o.loss);
  cfg.margin = o.margin;
  cfg.alpha = o.alpha;
  cfg.eta = o.eta;
  cfg.pos_weight = o.pos_weight;
  cfg.focal_gamma = o.focal_gamma;
  cfg.focal_alpha = o.focal_alpha;
  if (losses::is_metric_family(cfg.family))
    cfg.center = make_center(o.center, latent_dim, o.tcfg.seed);
  cfg.validate(losses::is_metric_family(cfg.family) ? latent_dim : -1);
  return cfg;
}

void check_compat(const models::ModelConfig& mc, const losses::LossConfig& lc) {
  const bool metric_loss = losses::is_metric_family(lc.family);
  const bool metric_head = mc.head == models::Head::METRIC;
  check_config(metric_loss == metric_head,
               std::string("loss family '") + losses::to_string(lc.family) + "' requires the " +
                   (metric_loss ? "metric" : "classifier") + " head");
}

void run_manifest_training(const TrainOpts& o, const models::ModelConfig& mcfg,
                           const losses::LossConfig& lcfg, train::TrainConfig tcfg,
                           const fs::path& out) {
  json manifest = read_json(o.manifest);
  json src = o.source_overridden || !manifest.contains("source") ? source_json(o.source)
                                                                 : manifest.at("source");
  auto store = make_store(src);
  check_config(store->height() == mcfg.input_h && store->width() == mcfg.input_w,
               "model input shape does not match the dataset image size");
  data::DatasetSplit split = data::materialize_split(*store, manifest);
  if (o.subsample > 1) {
    split.train = data::subsample_part(split.train, o.subsample, tcfg.seed);
    split.val = data::subsample_part(split.val, o.subsample, tcfg.seed + 1);
    split.test = data::subsample_part(split.test, o.subsample, tcfg.seed + 2);
  }
  std::printf("train %d, val %d, test %d samples\n", split.train.images.n, split.val.images.n,
              split.test.images.n);

  json runs = json::array();
  int aborted = 0;
  std::vector<double> best_aucs;
  for (int s = 0; s < tcfg.n_seeds; ++s) {
    train::TrainConfig run_cfg = tcfg;
    run_cfg.seed = substream(tcfg.seed, "seed-stream", static_cast<uint64_t>(s));
    models::Network net(mcfg);
    net.init_params(substream(run_cfg.seed, "init"));
    auto progress = [&](const train::EvalPoint& p) {
      if (o.verbose)
        std::printf("  seed %d iter %ld train %.5f val %.5f auc %.4f lr %.2e\n", s, p.iteration,
                    p.train_loss, p.val_loss, p.val_aucroc, p.lr);
    };
    train::RunResult r = train::train(net, split, lcfg, run_cfg, progress);
    const std::string tag = "seed" + std::to_string(s);
    write_text(out / ("history_" + tag + ".csv"), r.history_csv());
    json run_row{{"seed", s},
                 {"run_seed", r.seed},
                 {"aborted", r.aborted},
                 {"iterations", r.iterations},
                 {"best_val_aucroc", r.best_val_aucroc},
                 {"best_iteration", r.best_iteration},
                 {"wall_seconds", r.wall_seconds}};
    if (r.aborted) {
      ++aborted;
      run_row["abort_reason"] = r.abort_reason;
      write_text(out / ("abort_" + tag + ".json"),
                 json{{"seed", s}, {"reason", r.abort_reason}}.dump(2) + "\n");
      std::printf("seed %d ABORTED: %s\n", s, r.abort_reason.c_str());
    } else {
      train::save_checkpoint((out / ("checkpoint_" + tag + ".ckpt")).string(), net, r.iterations,
                             r.best_val_aucroc, json{{"loss", lcfg.to_json()}, {"seed", s}});
      best_aucs.push_back(r.best_val_aucroc);
      std::printf("seed %d done: best val AUCROC %.4f at iter %ld (%.1fs)\n", s,
                  r.best_val_aucroc, r.best_iteration, r.wall_seconds);
    }
    runs.push_back(std::move(run_row));
  }
  json result{{"runs", std::move(runs)}, {"n_aborted", aborted}};
  if (!best_aucs.empty()) {
    auto agg = eval::aggregate_values(best_aucs);
    result["val_aucroc_mean"] = agg.mean;
    result["val_aucroc_std"] = agg.stddev;
  }
  write_text(out / "result.json", result.dump(2) + "\n");
  if (aborted == tcfg.n_seeds)
    throw AbortExit("all runs aborted with non-finite loss; see " +
                    (out / "abort_seed0.json").string());
}

void run_slice_training(const TrainOpts& o, const models::ModelConfig& mcfg,
                        const losses::LossConfig& lcfg, const train::TrainConfig& tcfg,
                        const fs::path& out) {
  check_config(o.cv == "double", "--slice-root training requires --cv double");
  auto patients = data::load_slice_dataset(o.slice_root);
  data::FoldPlan plan = data::plan_double_cv(patients, tcfg.seed);
  data::SliceLoader loader(mcfg.input_h, mcfg.input_w);

  auto on_selected = [&](int outer, models::Network& net, const train::RunResult& r) {
    train::save_checkpoint((out / ("checkpoint_fold" + std::to_string(outer) + ".ckpt")).string(),
                           net, r.iterations, r.best_val_aucroc,
                           json{{"loss", lcfg.to_json()}, {"outer_fold", outer}});
  };
  train::DoubleCvResult cv =
      train::run_double_cv(plan, patients, loader, mcfg, lcfg, tcfg, on_selected);

  json folds = json::array();
  std::string csv = metrics_csv_header();
  for (const auto& f : cv.folds) {
    json inner = json::array();
    for (const auto& i : f.inner)
      inner.push_back(json{{"rotation", i.rotation},
                           {"aborted", i.aborted},
                           {"inner_val_aucroc", i.inner_val_aucroc}});
    folds.push_back(json{{"outer_fold", f.outer_fold},
                         {"selected_rotation", f.selected_rotation},
                         {"inner", std::move(inner)},
                         {"outer_metrics", metrics_json(f.outer_metrics)}});
    csv += metrics_csv_row("fold" + std::to_string(f.outer_fold), "outer_val", f.outer_metrics);
    std::printf("fold %d: rotation %d selected, outer F2 %.4f recall %.4f AUCROC %.4f\n",
                f.outer_fold, f.selected_rotation, f.outer_metrics.f2, f.outer_metrics.recall,
                f.outer_metrics.aucroc);
  }
  json result{{"folds", std::move(folds)},
              {"aggregate",
               json{{"precision", {{"mean", cv.aggregate.precision.mean},
                                   {"std", cv.aggregate.precision.stddev}}},
                    {"recall",
                     {{"mean", cv.aggregate.recall.mean}, {"std", cv.aggregate.recall.stddev}}},
                    {"f2", {{"mean", cv.aggregate.f2.mean}, {"std", cv.aggregate.f2.stddev}}},
                    {"accuracy", {{"mean", cv.aggregate.accuracy.mean},
                                  {"std", cv.aggregate.accuracy.stddev}}},
                    {"aucroc", {{"mean", cv.aggregate.aucroc.mean},
                                {"std", cv.aggregate.aucroc.stddev}}}}}};
  write_text(out / "result.json", result.dump(2) + "\n");
  write_text(out / "metrics.csv", csv);
  std::printf("double CV done: mean F2 %.4f +- %.4f, mean recall %.4f +- %.4f\n",
              cv.aggregate.f2.mean, cv.aggregate.f2.stddev, cv.aggregate.recall.mean,
              cv.aggregate.recall.stddev);
}

void run(const TrainOpts& o, const std::string& config_echo) {
  check_config(o.manifest.empty() != o.slice_root.empty(),
               "choose exactly one of --manifest / --slice-root");
  check_config(o.device == "cpu", "this build supports --device cpu only");
  check_config(o.subsample >= 1, "--subsample must be >= 1");
  if (o.threads > 0) nn::set_num_threads(o.threads);

  // full cross-field validation happens before any dataset work
  losses::LossFamily family = losses::loss_family_from_string(o.loss);
  models::ModelConfig mcfg = build_model_config(o, family);
  losses::LossConfig lcfg = build_loss_config(o, mcfg.latent_dim);
  check_compat(mcfg, lcfg);
  train::TrainConfig tcfg = o.tcfg;
  tcfg.augment_enabled = !o.no_augment;
  tcfg.validate();

  const fs::path out(o.out);
  fs::create_directories(out);
  json cfg_echo{{"command", "train"},
                {"dataset", o.manifest.empty()
                                ? json{{"kind", "slice-root"}, {"root", o.slice_root}}
                                : json{{"kind", "manifest"}, {"path", o.manifest}}},
                {"subsample", o.subsample},
                {"cv", o.cv},
                {"model", mcfg.to_json()},
                {"loss", lcfg.to_json()},
                {"train", tcfg.to_json()},
                {"device", o.device}};
  write_text(out / "config.json", cfg_echo.dump(2) + "\n");
  write_text(out / "config.ini", config_echo);

  if (!o.manifest.empty())
    run_manifest_training(o, mcfg, lcfg, tcfg, out);
  else
    run_slice_training(o, mcfg, lcfg, tcfg, out);
}

}  // namespace

void register_train(CLI::App& app) {
  auto opts = std::make_shared<TrainOpts>();
  CLI::App* sub = app.add_subcommand("train", "run the optimization loop");
  sub->set_config("--config");

  sub->add_option("--manifest", opts->manifest, "modified-cifar10 manifest from build-data");
  sub->add_option("--slice-root", opts->slice_root, "patient slice dataset root");
  sub->add_option("--subsample", opts->subsample,
                  "stratified 1-in-N subsample for reduced-demand probes");
  sub->add_option("--source", opts->source.kind, "override manifest image source")
      ->check(CLI::IsMember({"synthetic", "cifar10-bin"}))
      ->each([opts](const std::string&) { opts->source_overridden = true; });
  sub->add_option("--source-dir", opts->source.dir, "CIFAR-10 .bin directory");
  sub->add_option("--source-seed", opts->source.seed, "synthetic source seed");

  sub->add_option("--model", opts->model, "lenet | custom");
  sub->add_option("--head", opts->head, "metric | classifier (default: by loss family)");
  sub->add_option("--latent-dim", opts->latent_dim, "latent representation dimension");
  sub->add_option("--kernel-size", opts->kernel_size, "conv kernel size");
  sub->add_option("--block-widths", opts->block_widths, "conv/block widths")->delimiter(',');
  sub->add_option("--mlp-widths", opts->mlp_widths, "dense head widths")->delimiter(',');
  sub->add_option("--dropout", opts->dropout, "dropout rate on dense layers");
  sub->add_option("--input-size", opts->input_size, "square input size override");
  sub->add_option("--se-reduction", opts->se_reduction, "SE bottleneck reduction");
  sub->add_option("--dilations", opts->dilations, "3 dilation rates")->delimiter(',');

  sub->add_option("--loss", opts->loss, "cdcm | deep-sad | bce | wbce | focal");
  sub->add_option("--margin", opts->margin, "cdcm margin (also its decision threshold)");
  sub->add_option("--alpha", opts->alpha, "cdcm anomaly weight");
  sub->add_option("--eta", opts->eta, "deep-sad anomaly weight");
  sub->add_option("--pos-weight", opts->pos_weight, "wbce positive-class weight");
  sub->add_option("--focal-gamma", opts->focal_gamma, "focal loss gamma");
  sub->add_option("--focal-alpha", opts->focal_alpha, "focal loss alpha");
  sub->add_option("--center", opts->center, "ones | zeros | random");

  sub->add_option("--epochs", opts->tcfg.max_epochs, "maximum training epochs");
  sub->add_option("--batch-size", opts->tcfg.batch_size, "mini-batch size");
  sub->add_option("--lr", opts->tcfg.initial_lr, "initial learning rate");
  sub->add_option("--decay-factor", opts->tcfg.lr_decay_factor, "plateau lr decay factor");
  sub->add_option("--plateau-iters", opts->tcfg.plateau_patience_iters,
                  "lr-decay patience in iterations");
  sub->add_option("--early-stop-iters", opts->tcfg.early_stop_patience_iters,
                  "early-stop patience in iterations");
  sub->add_option("--seeds", opts->tcfg.n_seeds, "number of random-init runs");
  sub->add_option("--seed", opts->tcfg.seed, "root seed");
  sub->add_flag("--no-augment", opts->no_augment, "disable training augmentation");
  sub->add_option("--cv", opts->cv, "none | double")->check(CLI::IsMember({"none", "double"}));
  sub->add_option("--device", opts->device, "compute device (cpu)");
  sub->add_option("--threads", opts->threads, "worker threads (0 = library default)");
  sub->add_flag("--verbose", opts->verbose, "per-epoch progress lines");
  sub->add_option("--out", opts->out, "run directory");

  sub->callback([opts, sub] { run(*opts, sub->config_to_str(true, false)); });
}

}  // namespace cdcm::cli
