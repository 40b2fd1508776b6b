#include "cdcm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cdcm::train {

using nlohmann::json;

Adam::Adam(models::Network& net, double lr, double beta1, double beta2, double eps)
    : net_(net), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : net.params()) {
    m_.push_back(nn::Tensor::zeros(p.value.shape));
    v_.push_back(nn::Tensor::zeros(p.value.shape));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& params = net_.params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    double* m = m_[i].data.data();
    double* v = v_[i].data.data();
    for (size_t k = 0; k < p.value.data.size(); ++k) {
      const double g = p.grad.data[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value.data[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
    }
  }
  net_.zero_grads();
}

PlateauPolicy::PlateauPolicy(long plateau_patience_iters, long early_stop_patience_iters,
                             double decay_factor, double initial_lr)
    : plateau_(plateau_patience_iters),
      stop_(early_stop_patience_iters),
      factor_(decay_factor),
      lr_(initial_lr),
      best_loss_(std::numeric_limits<double>::infinity()) {
  check_config(plateau_ > 0 && stop_ > 0, "patience values must be positive");
  check_config(plateau_ < stop_, "plateau patience must be below the early-stop patience");
  check_config(factor_ > 0.0 && factor_ < 1.0, "decay factor must be in (0,1)");
}

PlateauPolicy::Decision PlateauPolicy::on_validation(long iteration, double val_loss) {
  Decision d;
  if (val_loss < best_loss_) {  // strict improvement
    best_loss_ = val_loss;
    best_iter_ = iteration;
  } else {
    if (iteration - best_iter_ >= stop_) d.stop = true;
    if (!d.stop && iteration - std::max(best_iter_, last_decay_iter_) >= plateau_) {
      lr_ *= factor_;
      last_decay_iter_ = iteration;
      d.decayed = true;
    }
  }
  d.lr = lr_;
  return d;
}

void TrainConfig::validate() const {
  check_config(initial_lr > 0.0, "learning rate must be positive");
  check_config(batch_size >= 1, "batch size must be >= 1");
  check_config(max_epochs >= 1, "max_epochs must be >= 1");
  check_config(plateau_patience_iters < early_stop_patience_iters,
               "plateau patience must be below the early-stop patience");
  check_config(n_seeds >= 1, "n_seeds must be >= 1");
}

json TrainConfig::to_json() const {
  json j;
  j["initial_lr"] = initial_lr;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["lr_decay_factor"] = lr_decay_factor;
  j["plateau_patience_iters"] = plateau_patience_iters;
  j["early_stop_patience_iters"] = early_stop_patience_iters;
  j["n_seeds"] = n_seeds;
  j["seed"] = seed;
  j["augment_enabled"] = augment_enabled;
  j["augment"] = {{"rotate_deg", augment.rotate_deg},
                  {"shift_frac", augment.shift_frac},
                  {"shear_deg", augment.shear_deg},
                  {"zoom_frac", augment.zoom_frac}};
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.plateau_patience_iters = j.value("plateau_patience_iters", c.plateau_patience_iters);
  c.early_stop_patience_iters = j.value("early_stop_patience_iters", c.early_stop_patience_iters);
  c.n_seeds = j.value("n_seeds", c.n_seeds);
  c.seed = j.value("seed", c.seed);
  c.augment_enabled = j.value("augment_enabled", c.augment_enabled);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    c.augment.rotate_deg = a.value("rotate_deg", c.augment.rotate_deg);
    c.augment.shift_frac = a.value("shift_frac", c.augment.shift_frac);
    c.augment.shear_deg = a.value("shear_deg", c.augment.shear_deg);
    c.augment.zoom_frac = a.value("zoom_frac", c.augment.zoom_frac);
  }
  c.validate();
  return c;
}

std::string RunResult::history_csv() const {
  std::ostringstream os;
  os << "iteration,train_loss,val_loss,val_aucroc,lr\n";
  os.precision(10);
  for (const auto& p : history)
    os << p.iteration << "," << p.train_loss << "," << p.val_loss << "," << p.val_aucroc << ","
       << p.lr << "\n";
  return os.str();
}

namespace {

void check_head_loss_compat(const models::ModelConfig& mc, const losses::LossConfig& lc) {
  const bool metric_loss = losses::is_metric_family(lc.family);
  const bool metric_head = mc.head == models::Head::METRIC;
  check_config(metric_loss == metric_head,
               std::string("loss family '") + losses::to_string(lc.family) +
                   "' requires the " + (metric_loss ? "metric" : "classifier") + " head");
  if (metric_loss) lc.validate(mc.latent_dim);
}

}  // namespace

eval::ScoreSet score_part(models::Network& net, const data::Part& part,
                          const losses::LossConfig& loss_cfg, int batch_size) {
  const bool metric = losses::is_metric_family(loss_cfg.family);
  eval::ScoreSet out;
  out.kind = metric ? eval::ScoreKind::DISTANCE : eval::ScoreKind::PROBABILITY;
  out.labels = part.labels;
  out.groups = part.groups;
  out.scores.reserve(part.labels.size());
  nn::Tensor center;
  if (metric)
    center = nn::Tensor({static_cast<int>(loss_cfg.center.size())}, loss_cfg.center);
  for (int start = 0; start < part.images.n; start += batch_size) {
    const int end = std::min(part.images.n, start + batch_size);
    std::vector<int> idx(static_cast<size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    nn::Tape tape;
    nn::Var x = tape.leaf(part.images.to_tensor(idx));
    nn::Var o = net.forward(tape, x, false, nullptr);
    if (metric) o = nn::euclidean_distance(tape, o, center);
    const nn::Tensor& v = tape.value(o);
    out.scores.insert(out.scores.end(), v.data.begin(), v.data.end());
  }
  return out;
}

RunResult train(models::Network& net, const data::DatasetSplit& split,
                const losses::LossConfig& loss_cfg, const TrainConfig& cfg,
                const std::function<void(const EvalPoint&)>& on_epoch) {
  cfg.validate();
  check_head_loss_compat(net.config(), loss_cfg);
  check_config(split.train.images.n > 0, "training split is empty");
  check_config(split.val.images.n > 0, "validation split is empty");
  const bool metric = losses::is_metric_family(loss_cfg.family);
  nn::Tensor center;
  if (metric)
    center = nn::Tensor({static_cast<int>(loss_cfg.center.size())}, loss_cfg.center);

  const auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  result.seed = cfg.seed;

  Adam optimizer(net, cfg.initial_lr);
  PlateauPolicy policy(cfg.plateau_patience_iters, cfg.early_stop_patience_iters,
                       cfg.lr_decay_factor, cfg.initial_lr);
  Rng dropout_rng(substream(cfg.seed, "dropout"));

  std::vector<int> order(static_cast<size_t>(split.train.images.n));
  std::iota(order.begin(), order.end(), 0);

  long iteration = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    Rng shuffle_rng(substream(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_batches = 0;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<int> idx(order.begin() + static_cast<long>(start),
                           order.begin() + static_cast<long>(end));

      data::ImageBatch batch;
      batch.h = split.train.images.h;
      batch.w = split.train.images.w;
      batch.c = split.train.images.c;
      for (int i : idx) batch.append(split.train.images.image(i));
      if (cfg.augment_enabled)
        batch = data::augment(batch,
                              substream(cfg.seed, "augment",
                                        static_cast<uint64_t>(epoch) * 1000003ULL + start),
                              cfg.augment);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (int i : idx) labels.push_back(split.train.labels[static_cast<size_t>(i)]);

      double loss_value = 0.0;
      try {
        nn::Tape tape;
        nn::Var x = tape.leaf(batch.to_tensor());
        nn::Var o = net.forward(tape, x, true, &dropout_rng);
        if (metric) o = nn::euclidean_distance(tape, o, center);
        nn::Var L = losses::loss_op(tape, o, labels, loss_cfg);
        loss_value = tape.value(L).data[0];
        if (!std::isfinite(loss_value)) {
          result.aborted = true;
          result.abort_reason = "non-finite training loss at iteration " +
                                std::to_string(iteration) + " (value " +
                                std::to_string(loss_value) + ")";
          break;
        }
        tape.backward(L);
      } catch (const SingularityError& e) {
        result.aborted = true;
        result.abort_reason = std::string("loss singularity at iteration ") +
                              std::to_string(iteration) + ": " + e.what();
        break;
      }
      optimizer.step();
      ++iteration;
      epoch_loss += loss_value;
      ++epoch_batches;
    }
    if (result.aborted) break;

    // end-of-epoch validation
    eval::ScoreSet val_scores = score_part(net, split.val, loss_cfg, cfg.batch_size);
    double val_loss;
    try {
      if (metric) {
        losses::LabeledDistances b{val_scores.scores, val_scores.labels};
        val_loss = loss_cfg.family == losses::LossFamily::CDCM
                       ? losses::cdcm_loss(b, loss_cfg)
                       : losses::deep_sad_loss(b, loss_cfg);
      } else if (loss_cfg.family == losses::LossFamily::BCE) {
        val_loss = losses::bce_loss(val_scores.scores, val_scores.labels);
      } else if (loss_cfg.family == losses::LossFamily::WBCE) {
        val_loss = losses::wbce_loss(val_scores.scores, val_scores.labels, loss_cfg.pos_weight);
      } else {
        val_loss = losses::focal_loss(val_scores.scores, val_scores.labels, loss_cfg.focal_alpha,
                                      loss_cfg.focal_gamma);
      }
    } catch (const SingularityError& e) {
      result.aborted = true;
      result.abort_reason = std::string("validation loss singularity: ") + e.what();
      break;
    }
    if (!std::isfinite(val_loss)) {
      result.aborted = true;
      result.abort_reason = "non-finite validation loss at iteration " + std::to_string(iteration);
      break;
    }
    const double val_auc = eval::auc_roc(val_scores);

    EvalPoint pt;
    pt.iteration = iteration;
    pt.train_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
    pt.val_loss = val_loss;
    pt.val_aucroc = val_auc;
    pt.lr = optimizer.lr();
    result.history.push_back(pt);
    if (on_epoch) on_epoch(pt);

    if (val_auc > result.best_val_aucroc) {
      result.best_val_aucroc = val_auc;
      result.best_iteration = iteration;
      result.best_params = net.snapshot();
    }

    PlateauPolicy::Decision d = policy.on_validation(iteration, val_loss);
    optimizer.set_lr(d.lr);
    if (d.stop) stop = true;
  }

  result.iterations = iteration;
  if (!result.best_params.empty()) net.restore(result.best_params);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<RunResult> run_multi_seed(const models::ModelConfig& model_cfg,
                                      const data::DatasetSplit& split,
                                      const losses::LossConfig& loss_cfg,
                                      const TrainConfig& cfg) {
  cfg.validate();
  std::vector<RunResult> results;
  for (int s = 0; s < cfg.n_seeds; ++s) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = substream(cfg.seed, "seed-stream", static_cast<uint64_t>(s));
    models::Network net(model_cfg);
    net.init_params(substream(run_cfg.seed, "init"));
    RunResult r = train(net, split, loss_cfg, run_cfg);
    r.seed = run_cfg.seed;
    results.push_back(std::move(r));
  }
  return results;
}

DoubleCvResult run_double_cv_with(const data::FoldPlan& plan,
                                  const std::vector<data::PatientRecord>& patients,
                                  const data::SliceLoader& loader, const TrainFn& train_fn,
                                  const EvalF& eval_fn) {
  DoubleCvResult out;
  std::vector<eval::MetricsReport> fold_reports;
  for (size_t f = 0; f < plan.outer.size(); ++f) {
    const auto& fold = plan.outer[f];
    FoldOutcome outcome;
    outcome.outer_fold = static_cast<int>(f);

    std::vector<RunResult> runs;
    std::vector<data::Part> train_parts;
    int best_rot = -1;
    double best_auc = -std::numeric_limits<double>::infinity();
    for (size_t r = 0; r < fold.rotations.size(); ++r) {
      const auto& rot = fold.rotations[r];
      data::Part train_part =
          loader.load_part(patients, rot.train_patients, eval::Group::SEEN_ANOMALY);
      data::Part inner_val =
          loader.load_part(patients, rot.inner_val_patients, eval::Group::SEEN_ANOMALY);
      RunResult run = train_fn(static_cast<int>(f), static_cast<int>(r), train_part, inner_val);
      InnerOutcome inner;
      inner.rotation = static_cast<int>(r);
      inner.aborted = run.aborted;
      inner.inner_val_aucroc = run.best_val_aucroc;
      outcome.inner.push_back(inner);
      if (!run.aborted && run.best_val_aucroc > best_auc) {
        best_auc = run.best_val_aucroc;
        best_rot = static_cast<int>(r);
      }
      runs.push_back(std::move(run));
      train_parts.push_back(std::move(train_part));
    }
    check_config(best_rot >= 0, "all inner rotations aborted in outer fold " + std::to_string(f));
    outcome.selected_rotation = best_rot;

    // outer-val slices are materialized only now, after inner selection
    data::Part outer_val =
        loader.load_part(patients, fold.outer_val_patients, eval::Group::UNSEEN_ANOMALY);
    outcome.outer_metrics =
        eval_fn(static_cast<int>(f), best_rot, runs[static_cast<size_t>(best_rot)],
                train_parts[static_cast<size_t>(best_rot)], outer_val);
    fold_reports.push_back(outcome.outer_metrics);
    out.folds.push_back(std::move(outcome));
  }
  out.aggregate = eval::aggregate_runs(fold_reports);
  return out;
}

DoubleCvResult run_double_cv(
    const data::FoldPlan& plan, const std::vector<data::PatientRecord>& patients,
    const data::SliceLoader& loader, const models::ModelConfig& model_cfg,
    const losses::LossConfig& loss_cfg, const TrainConfig& cfg,
    const std::function<void(int, models::Network&, const RunResult&)>& on_selected) {
  cfg.validate();
  check_head_loss_compat(model_cfg, loss_cfg);

  // nets per (outer, rotation) so the selected model survives until evaluation
  auto nets = std::make_shared<std::map<std::pair<int, int>, models::Network>>();

  TrainFn train_fn = [&, nets](int outer, int rotation, const data::Part& train_part,
                               const data::Part& inner_val) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = substream(cfg.seed, "fold",
                             static_cast<uint64_t>(outer) * 100 + static_cast<uint64_t>(rotation));
    auto [it, _] = nets->emplace(std::make_pair(outer, rotation), models::Network(model_cfg));
    models::Network& net = it->second;
    net.init_params(substream(run_cfg.seed, "init"));
    data::DatasetSplit fold_split;
    fold_split.train = train_part;
    fold_split.val = inner_val;
    return train(net, fold_split, loss_cfg, run_cfg);
  };

  EvalF eval_fn = [&, nets](int outer, int rotation, const RunResult& run,
                            const data::Part& train_part, const data::Part& outer_val) {
    models::Network& net = nets->at({outer, rotation});
    // decision threshold per family; deep-sad recomputes the 95th percentile
    // from the selected rotation's training normals
    double threshold;
    if (loss_cfg.family == losses::LossFamily::DEEP_SAD) {
      eval::ScoreSet train_scores = score_part(net, train_part, loss_cfg, cfg.batch_size);
      std::vector<double> normal_scores;
      for (size_t i = 0; i < train_scores.scores.size(); ++i)
        if (train_scores.labels[i] == 0) normal_scores.push_back(train_scores.scores[i]);
      threshold = eval::decision_threshold(loss_cfg.family, loss_cfg.margin, normal_scores);
    } else {
      threshold = eval::decision_threshold(loss_cfg.family, loss_cfg.margin, {});
    }
    eval::ScoreSet scores = score_part(net, outer_val, loss_cfg, cfg.batch_size);
    eval::MetricsReport report = eval::evaluate_scores(scores, threshold);
    if (on_selected) on_selected(outer, net, run);
    return report;
  };

  return run_double_cv_with(plan, patients, loader, train_fn, eval_fn);
}

}  // namespace cdcm::train
