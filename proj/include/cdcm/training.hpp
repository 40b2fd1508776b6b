#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdcm/data.hpp"
#include "cdcm/losses.hpp"
#include "cdcm/models.hpp"

namespace cdcm::train {

class Adam {
public:
  Adam(models::Network& net, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  // Applies accumulated gradients and zeroes them.
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

private:
  models::Network& net_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

// Validation-loss plateau policy, counted in optimizer iterations:
//  - decay lr by the factor when the loss has not improved (strictly) for
//    plateau_patience iterations (measured from the later of the last
//    improvement and the last decay),
//  - request a stop when it has not improved for early_stop_patience
//    iterations. Best-so-far tracking continues across decays.
class PlateauPolicy {
public:
  PlateauPolicy(long plateau_patience_iters, long early_stop_patience_iters,
                double decay_factor, double initial_lr);

  struct Decision {
    bool decayed = false;
    bool stop = false;
    double lr = 0.0;
  };

  Decision on_validation(long iteration, double val_loss);

  double lr() const { return lr_; }
  double best_loss() const { return best_loss_; }
  long best_iteration() const { return best_iter_; }

private:
  long plateau_, stop_;
  double factor_, lr_;
  double best_loss_;
  long best_iter_ = 0;
  long last_decay_iter_ = 0;
};

struct TrainConfig {
  double initial_lr = 1e-3;
  int batch_size = 128;
  int max_epochs = 400;
  double lr_decay_factor = 0.5;
  long plateau_patience_iters = 900;
  long early_stop_patience_iters = 4500;
  int n_seeds = 5;
  uint64_t seed = 0;
  bool augment_enabled = true;
  data::AugmentParams augment = data::AugmentParams::defaults();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EvalPoint {
  long iteration = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_aucroc = 0.0;
  double lr = 0.0;
};

struct RunResult {
  bool aborted = false;
  std::string abort_reason;
  std::vector<EvalPoint> history;
  double best_val_aucroc = -1.0;
  long best_iteration = -1;
  uint64_t seed = 0;
  double wall_seconds = 0.0;
  long iterations = 0;
  std::vector<nn::Tensor> best_params;  // snapshot at the best validation AUCROC

  std::string history_csv() const;
};

// Scores a part with the network: distances to the configured center for
// metric heads, probabilities for the classifier head.
eval::ScoreSet score_part(models::Network& net, const data::Part& part,
                          const losses::LossConfig& loss_cfg, int batch_size = 256);

// One optimization run. The network is left holding the best-AUCROC
// parameters; a non-finite loss aborts the run (flagged in the result, not
// thrown). The center is held fixed throughout. on_epoch, when set, is called
// after each validation pass.
RunResult train(models::Network& net, const data::DatasetSplit& split,
                const losses::LossConfig& loss_cfg, const TrainConfig& cfg,
                const std::function<void(const EvalPoint&)>& on_epoch = {});

// Independent seeds; per-run aborts are kept in the results, remaining seeds
// continue.
std::vector<RunResult> run_multi_seed(const models::ModelConfig& model_cfg,
                                      const data::DatasetSplit& split,
                                      const losses::LossConfig& loss_cfg, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Patient-level double CV: per outer fold, train the 4 inner rotations, pick
// the best inner-val AUCROC, evaluate that model once on the outer-val data.

struct InnerOutcome {
  int rotation = 0;
  bool aborted = false;
  double inner_val_aucroc = -1.0;
};

struct FoldOutcome {
  int outer_fold = 0;
  int selected_rotation = -1;
  std::vector<InnerOutcome> inner;
  eval::MetricsReport outer_metrics;
};

struct DoubleCvResult {
  std::vector<FoldOutcome> folds;
  eval::AggregateReport aggregate;
};

// Hooks so the selection logic is testable without real training:
// train_fn(outer, rotation, train part, inner-val part) -> RunResult;
// eval_fn(outer, selected rotation, its RunResult, train part, outer-val part).
using TrainFn = std::function<RunResult(int, int, const data::Part&, const data::Part&)>;
using EvalF = std::function<eval::MetricsReport(int, int, const RunResult&, const data::Part&,
                                                const data::Part&)>;

DoubleCvResult run_double_cv_with(const data::FoldPlan& plan,
                                  const std::vector<data::PatientRecord>& patients,
                                  const data::SliceLoader& loader, const TrainFn& train_fn,
                                  const EvalF& eval_fn);

// Production wiring of the hooks with real training and threshold rules.
// on_selected, when set, receives each outer fold's selected network after
// its outer-val evaluation (for checkpointing).
DoubleCvResult run_double_cv(
    const data::FoldPlan& plan, const std::vector<data::PatientRecord>& patients,
    const data::SliceLoader& loader, const models::ModelConfig& model_cfg,
    const losses::LossConfig& loss_cfg, const TrainConfig& cfg,
    const std::function<void(int, models::Network&, const RunResult&)>& on_selected = {});

}  // namespace cdcm::train
