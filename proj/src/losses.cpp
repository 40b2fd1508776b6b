#include "cdcm/losses.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace cdcm::losses {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

void check_prob_batch(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_config(probs.size() == labels.size(),
               "probability and label vectors differ in length");
  if (probs.empty()) throw EmptyBatchError("empty probability batch");
  for (int y : labels) check_config(y == 0 || y == 1, "labels must be 0 or 1");
}

}  // namespace

std::string to_string(LossFamily f) {
  switch (f) {
    case LossFamily::CDCM: return "cdcm";
    case LossFamily::DEEP_SAD: return "deep-sad";
    case LossFamily::BCE: return "bce";
    case LossFamily::WBCE: return "wbce";
    case LossFamily::FOCAL: return "focal";
  }
  return "?";
}

LossFamily loss_family_from_string(const std::string& s) {
  if (s == "cdcm") return LossFamily::CDCM;
  if (s == "deep-sad" || s == "deep_sad" || s == "deepsad") return LossFamily::DEEP_SAD;
  if (s == "bce") return LossFamily::BCE;
  if (s == "wbce") return LossFamily::WBCE;
  if (s == "focal") return LossFamily::FOCAL;
  throw ConfigError("unknown loss family '" + s + "'");
}

bool is_metric_family(LossFamily f) {
  return f == LossFamily::CDCM || f == LossFamily::DEEP_SAD;
}

void LossConfig::validate(int latent_dim) const {
  if (family == LossFamily::CDCM) {
    check_config(margin > 0.0, "cdcm margin must be > 0");
    check_config(alpha > 0.0, "cdcm alpha must be > 0");
  }
  if (family == LossFamily::DEEP_SAD) check_config(eta > 0.0, "deep-sad eta must be > 0");
  if (family == LossFamily::WBCE) check_config(pos_weight > 0.0, "pos_weight must be > 0");
  if (family == LossFamily::FOCAL) {
    check_config(focal_gamma >= 0.0, "focal gamma must be >= 0");
    check_config(focal_alpha > 0.0 && focal_alpha < 1.0, "focal alpha must be in (0,1)");
  }
  if (is_metric_family(family)) {
    check_config(!center.empty(), "metric losses require a center vector");
    if (latent_dim >= 0)
      check_config(static_cast<int>(center.size()) == latent_dim,
                   "center length " + std::to_string(center.size()) +
                       " does not match latent dimension " + std::to_string(latent_dim));
  }
}

nlohmann::json LossConfig::to_json() const {
  nlohmann::json j;
  j["family"] = to_string(family);
  switch (family) {
    case LossFamily::CDCM:
      j["center"] = center;
      j["margin"] = margin;
      j["alpha"] = alpha;
      break;
    case LossFamily::DEEP_SAD:
      j["center"] = center;
      j["eta"] = eta;
      break;
    case LossFamily::BCE:
      break;
    case LossFamily::WBCE:
      j["pos_weight"] = pos_weight;
      break;
    case LossFamily::FOCAL:
      j["focal_gamma"] = focal_gamma;
      j["focal_alpha"] = focal_alpha;
      break;
  }
  return j;
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig c;
  c.family = loss_family_from_string(j.at("family").get<std::string>());
  if (j.contains("center")) c.center = j.at("center").get<std::vector<double>>();
  c.margin = j.value("margin", c.margin);
  c.alpha = j.value("alpha", c.alpha);
  c.eta = j.value("eta", c.eta);
  c.pos_weight = j.value("pos_weight", c.pos_weight);
  c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
  c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
  c.validate();
  return c;
}

void LabeledDistances::validate() const {
  check_config(distances.size() == labels.size(),
               "distance and label vectors differ in length");
  if (distances.empty()) throw EmptyBatchError("batch has no normal and no anomaly samples");
  for (double d : distances) check_config(d >= 0.0, "distances must be nonnegative");
  for (int y : labels) check_config(y == 0 || y == 1, "labels must be 0 or 1");
}

int LabeledDistances::count_normal() const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), 0));
}

int LabeledDistances::count_anomaly() const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), 1));
}

std::vector<double> euclidean_distances(const nn::Tensor& latent,
                                        const std::vector<double>& center) {
  check_config(latent.rank() == 2, "latent batch must be rank-2");
  const int n = latent.dim(0), d = latent.dim(1);
  check_config(static_cast<int>(center.size()) == d,
               "center length " + std::to_string(center.size()) +
                   " does not match latent width " + std::to_string(d));
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = latent.data.data() + static_cast<int64_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      const double diff = row[k] - center[static_cast<size_t>(k)];
      s += diff * diff;
    }
    out[static_cast<size_t>(i)] = std::sqrt(s);
  }
  return out;
}

double cdcm_loss_grad(const LabeledDistances& batch, const LossConfig& cfg,
                      std::vector<double>& grad_out) {
  check_config(cfg.family == LossFamily::CDCM, "loss config is not cdcm");
  check_config(cfg.margin > 0.0 && cfg.alpha > 0.0, "cdcm requires margin > 0 and alpha > 0");
  batch.validate();
  const int n_normal = batch.count_normal();
  const int n_anomaly = batch.count_anomaly();
  grad_out.assign(batch.distances.size(), 0.0);

  double normal_sum = 0.0, anomaly_sum = 0.0;
  for (size_t i = 0; i < batch.distances.size(); ++i) {
    const double d = batch.distances[i];
    if (batch.labels[i] == 0) {
      normal_sum += d;
      grad_out[i] = 1.0 / n_normal;
    } else {
      const double sig = stable_sigmoid(cfg.margin - d);  // 1 / (1 + e^{d - m})
      anomaly_sum += cfg.alpha * (std::max(0.0, cfg.margin - d) + sig);
      // Hinge subgradient 0 at d == m; sigmoid term always pushes outward.
      const double hinge_g = d < cfg.margin ? -1.0 : 0.0;
      const double sig_g = -sig * (1.0 - sig);
      grad_out[i] = cfg.alpha * (hinge_g + sig_g) / n_anomaly;
    }
  }
  double loss = 0.0;
  if (n_normal > 0) loss += normal_sum / n_normal;
  if (n_anomaly > 0) loss += anomaly_sum / n_anomaly;
  return loss;
}

double cdcm_loss(const LabeledDistances& batch, const LossConfig& cfg) {
  std::vector<double> scratch;
  return cdcm_loss_grad(batch, cfg, scratch);
}

double deep_sad_loss_grad(const LabeledDistances& batch, const LossConfig& cfg,
                          std::vector<double>& grad_out) {
  check_config(cfg.family == LossFamily::DEEP_SAD, "loss config is not deep-sad");
  check_config(cfg.eta > 0.0, "deep-sad requires eta > 0");
  batch.validate();
  const double n = static_cast<double>(batch.distances.size());
  grad_out.assign(batch.distances.size(), 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < batch.distances.size(); ++i) {
    const double d = batch.distances[i];
    if (batch.labels[i] == 0) {
      sum += d * d;
      grad_out[i] = 2.0 * d / n;
    } else {
      if (d <= 1e-12)
        throw SingularityError("deep-sad anomaly at distance " + std::to_string(d) +
                               ": inverse-square term is unbounded");
      sum += cfg.eta / (d * d);
      grad_out[i] = -2.0 * cfg.eta / (d * d * d) / n;
    }
  }
  return sum / n;
}

double deep_sad_loss(const LabeledDistances& batch, const LossConfig& cfg) {
  std::vector<double> scratch;
  return deep_sad_loss_grad(batch, cfg, scratch);
}

double wbce_loss_grad(const std::vector<double>& probs, const std::vector<int>& labels,
                      double pos_weight, std::vector<double>& grad_out) {
  check_prob_batch(probs, labels);
  check_config(pos_weight > 0.0, "pos_weight must be > 0");
  const double n = static_cast<double>(probs.size());
  grad_out.assign(probs.size(), 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    if (labels[i] == 1) {
      sum -= pos_weight * std::log(p);
      grad_out[i] = -pos_weight / p / n;
    } else {
      sum -= std::log(1.0 - p);
      grad_out[i] = 1.0 / (1.0 - p) / n;
    }
  }
  return sum / n;
}

double wbce_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                 double pos_weight) {
  std::vector<double> scratch;
  return wbce_loss_grad(probs, labels, pos_weight, scratch);
}

double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  return wbce_loss(probs, labels, 1.0);
}

double bce_loss_grad(const std::vector<double>& probs, const std::vector<int>& labels,
                     std::vector<double>& grad_out) {
  return wbce_loss_grad(probs, labels, 1.0, grad_out);
}

double focal_loss_grad(const std::vector<double>& probs, const std::vector<int>& labels,
                       double focal_alpha, double focal_gamma, std::vector<double>& grad_out) {
  check_prob_batch(probs, labels);
  check_config(focal_gamma >= 0.0, "focal gamma must be >= 0");
  check_config(focal_alpha > 0.0 && focal_alpha < 1.0, "focal alpha must be in (0,1)");
  const double n = static_cast<double>(probs.size());
  grad_out.assign(probs.size(), 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    const double pt = labels[i] == 1 ? p : 1.0 - p;
    const double at = labels[i] == 1 ? focal_alpha : 1.0 - focal_alpha;
    const double w = std::pow(1.0 - pt, focal_gamma);
    sum -= at * w * std::log(pt);
    double dpt = -at * w / pt;
    if (focal_gamma > 0.0)
      dpt += at * focal_gamma * std::pow(1.0 - pt, focal_gamma - 1.0) * std::log(pt);
    grad_out[i] = (labels[i] == 1 ? dpt : -dpt) / n;
  }
  return sum / n;
}

double focal_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                  double focal_alpha, double focal_gamma) {
  std::vector<double> scratch;
  return focal_loss_grad(probs, labels, focal_alpha, focal_gamma, scratch);
}

nn::Var loss_op(nn::Tape& tape, nn::Var scores, const std::vector<int>& labels,
                const LossConfig& cfg) {
  const nn::Tensor& sv = tape.value(scores);
  check_config(sv.numel() == static_cast<int64_t>(labels.size()),
               "score count does not match label count");
  LossConfig c = cfg;
  std::vector<int> y = labels;
  return nn::custom_loss_node(tape, scores, [c, y](const nn::Tensor& in, nn::Tensor& grad) {
    std::vector<double> g;
    double val = 0.0;
    switch (c.family) {
      case LossFamily::CDCM: {
        LabeledDistances b{in.data, y};
        val = cdcm_loss_grad(b, c, g);
        break;
      }
      case LossFamily::DEEP_SAD: {
        LabeledDistances b{in.data, y};
        val = deep_sad_loss_grad(b, c, g);
        break;
      }
      case LossFamily::BCE:
        val = bce_loss_grad(in.data, y, g);
        break;
      case LossFamily::WBCE:
        val = wbce_loss_grad(in.data, y, c.pos_weight, g);
        break;
      case LossFamily::FOCAL:
        val = focal_loss_grad(in.data, y, c.focal_alpha, c.focal_gamma, g);
        break;
    }
    grad.data = std::move(g);
    return val;
  });
}

}  // namespace cdcm::losses
