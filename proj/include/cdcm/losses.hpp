#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cdcm/tape.hpp"
#include "cdcm/tensor.hpp"

namespace cdcm::losses {

enum class LossFamily { CDCM, DEEP_SAD, BCE, WBCE, FOCAL };

std::string to_string(LossFamily f);
LossFamily loss_family_from_string(const std::string& s);

// True for the center-based metric losses (distance scores); false for the
// cross-entropy family (probability scores).
bool is_metric_family(LossFamily f);

struct LossConfig {
  LossFamily family = LossFamily::CDCM;
  std::vector<double> center;   // CDCM / DEEP_SAD
  double margin = 5.0;          // CDCM
  double alpha = 5.0;           // CDCM anomaly weight (Table-like default; see docs)
  double eta = 5.0;             // DEEP_SAD anomaly weight
  double pos_weight = 1.0;      // WBCE
  double focal_gamma = 2.0;     // FOCAL
  double focal_alpha = 0.25;    // FOCAL

  // latent_dim < 0 skips the center-length check.
  void validate(int latent_dim = -1) const;

  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
};

struct LabeledDistances {
  std::vector<double> distances;
  std::vector<int> labels;  // 1 = anomaly

  void validate() const;
  int count_normal() const;
  int count_anomaly() const;
};

// result[i] = || latent row i - center ||
std::vector<double> euclidean_distances(const nn::Tensor& latent,
                                        const std::vector<double>& center);

// Eq.-1 style center-based contrastive loss: normals pay their distance,
// anomalies pay alpha * (hinge to the margin + a sigmoid repulsion term).
double cdcm_loss(const LabeledDistances& batch, const LossConfig& cfg);
// Analytic d loss / d distance_i; returns the loss value.
double cdcm_loss_grad(const LabeledDistances& batch, const LossConfig& cfg,
                      std::vector<double>& grad_out);

// Mean over the whole batch of d^2 for normals and eta / d^2 for anomalies.
// Note the normalization differs from cdcm_loss: a single 1/N_total factor.
double deep_sad_loss(const LabeledDistances& batch, const LossConfig& cfg);
double deep_sad_loss_grad(const LabeledDistances& batch, const LossConfig& cfg,
                          std::vector<double>& grad_out);

// Cross-entropy family over probabilities in (0,1). Probabilities are clamped
// to [kProbEps, 1 - kProbEps]; gradients are evaluated at the clamped value
// and passed straight through.
inline constexpr double kProbEps = 1e-7;

double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels);
double bce_loss_grad(const std::vector<double>& probs, const std::vector<int>& labels,
                     std::vector<double>& grad_out);
double wbce_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                 double pos_weight);
double wbce_loss_grad(const std::vector<double>& probs, const std::vector<int>& labels,
                      double pos_weight, std::vector<double>& grad_out);
double focal_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                  double focal_alpha, double focal_gamma);
double focal_loss_grad(const std::vector<double>& probs, const std::vector<int>& labels,
                       double focal_alpha, double focal_gamma, std::vector<double>& grad_out);

// Tape-level wrappers. `scores` is the distance vector [N] for the metric
// families or the probability output [N] / [N,1] for the CE family.
nn::Var loss_op(nn::Tape& tape, nn::Var scores, const std::vector<int>& labels,
                const LossConfig& cfg);

}  // namespace cdcm::losses
