#include "cdcm/models.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace cdcm::models {

using nn::Activation;
using nn::Padding;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using nlohmann::json;

std::string to_string(ModelFamily f) {
  return f == ModelFamily::LENET_TYPE ? "lenet" : "custom";
}

std::string to_string(Head h) {
  return h == Head::METRIC ? "metric" : "classifier";
}

ModelFamily model_family_from_string(const std::string& s) {
  if (s == "lenet" || s == "lenet-type") return ModelFamily::LENET_TYPE;
  if (s == "custom" || s == "se-dilated" || s == "custom-se-dilated")
    return ModelFamily::CUSTOM_SE_DILATED;
  throw ConfigError("unknown model family '" + s + "'");
}

Head head_from_string(const std::string& s) {
  if (s == "metric") return Head::METRIC;
  if (s == "classifier" || s == "sigmoid" || s == "sigmoid-classifier")
    return Head::SIGMOID_CLASSIFIER;
  throw ConfigError("unknown head '" + s + "'");
}

ModelConfig ModelConfig::lenet(Head head) {
  ModelConfig c;
  c.family = ModelFamily::LENET_TYPE;
  c.input_h = c.input_w = 32;
  c.input_c = 3;
  c.kernel_size = 5;
  c.block_widths = {32, 64, 128};
  c.mlp_widths = {512};
  c.dropout = 0.0;
  c.head = head;
  return c;
}

ModelConfig ModelConfig::custom_se_dilated(Head head) {
  ModelConfig c;
  c.family = ModelFamily::CUSTOM_SE_DILATED;
  c.input_h = c.input_w = 256;
  c.input_c = 3;
  c.kernel_size = 3;
  c.block_widths = {32, 64, 128, 256};
  c.mlp_widths = {512, 256};
  c.dropout = 0.2;
  c.dilation_rates = {1, 2, 4};
  c.se_reduction = 4;
  c.head = head;
  return c;
}

int ModelConfig::num_pool_stages() const {
  return family == ModelFamily::LENET_TYPE ? 3 : static_cast<int>(block_widths.size());
}

void ModelConfig::validate() const {
  check_config(latent_dim > 0, "latent_dim must be positive");
  check_config(input_c > 0 && input_h > 0 && input_w > 0, "bad input shape");
  check_config(kernel_size >= 1 && kernel_size % 2 == 1, "kernel size must be odd");
  check_config(leaky_relu_slope >= 0.0, "leaky ReLU slope must be >= 0");
  check_config(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
  check_config(!block_widths.empty(), "block_widths must be nonempty");
  const int pools = num_pool_stages();
  const int factor = 1 << pools;
  check_config(input_h % factor == 0 && input_w % factor == 0,
               "input shape " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                   " is incompatible with " + std::to_string(pools) + " pooling stages");
  if (family == ModelFamily::CUSTOM_SE_DILATED) {
    check_config(dilation_rates[0] < dilation_rates[1] && dilation_rates[1] < dilation_rates[2],
                 "dilation rates must be strictly increasing");
    check_config(dilation_rates[0] >= 1, "dilation rates must be >= 1");
    check_config(se_reduction >= 1, "se_reduction must be >= 1");
    for (int w : block_widths)
      check_config((3 * w) % se_reduction == 0,
                   "block width " + std::to_string(w) + ": concatenated channels " +
                       std::to_string(3 * w) + " not divisible by SE reduction " +
                       std::to_string(se_reduction));
  }
}

json ModelConfig::to_json() const {
  json j;
  j["family"] = to_string(family);
  j["input_shape"] = {input_h, input_w, input_c};
  j["latent_dim"] = latent_dim;
  j["head"] = models::to_string(head);
  j["kernel_size"] = kernel_size;
  j["leaky_relu_slope"] = leaky_relu_slope;
  j["dropout"] = dropout;
  j["dilation_rates"] = dilation_rates;
  j["se_reduction"] = se_reduction;
  j["block_widths"] = block_widths;
  j["mlp_widths"] = mlp_widths;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.family = model_family_from_string(j.at("family").get<std::string>());
  auto shape = j.at("input_shape").get<std::vector<int>>();
  check_config(shape.size() == 3, "input_shape must have 3 entries");
  c.input_h = shape[0];
  c.input_w = shape[1];
  c.input_c = shape[2];
  c.latent_dim = j.at("latent_dim").get<int>();
  c.head = head_from_string(j.at("head").get<std::string>());
  c.kernel_size = j.at("kernel_size").get<int>();
  c.leaky_relu_slope = j.at("leaky_relu_slope").get<double>();
  c.dropout = j.at("dropout").get<double>();
  auto rates = j.at("dilation_rates").get<std::vector<int>>();
  check_config(rates.size() == 3, "dilation_rates must have 3 entries");
  std::copy(rates.begin(), rates.end(), c.dilation_rates.begin());
  c.se_reduction = j.at("se_reduction").get<int>();
  c.block_widths = j.at("block_widths").get<std::vector<int>>();
  c.mlp_widths = j.at("mlp_widths").get<std::vector<int>>();
  c.validate();
  return c;
}

void xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
}

SeParams SeParams::init(int channels, int reduction, Rng& rng) {
  check_config(channels % reduction == 0,
               "channel count " + std::to_string(channels) + " not divisible by reduction " +
                   std::to_string(reduction));
  const int mid = channels / reduction;
  SeParams p;
  p.w1 = Tensor({channels, mid});
  p.b1 = Tensor({mid});
  p.w2 = Tensor({mid, channels});
  p.b2 = Tensor({channels});
  xavier_uniform(p.w1, channels, mid, rng);
  xavier_uniform(p.w2, mid, channels, rng);
  return p;
}

Var se_block(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2) {
  Var desc = nn::global_avg_pool(t, x);
  Var h = nn::leaky_relu(t, nn::dense(t, desc, w1, b1), 0.0);  // plain ReLU
  Var gates = nn::sigmoid(t, nn::dense(t, h, w2, b2));
  return nn::scale_channels(t, x, gates);
}

Var se_dilated_block(Tape& t, Var x, const std::array<int, 3>& rates, double leaky_slope,
                     const std::array<Var, 3>& ws, const std::array<Var, 3>& bs, Var se_w1,
                     Var se_b1, Var se_w2, Var se_b2) {
  check_config(rates[0] < rates[1] && rates[1] < rates[2],
               "dilation rates must be strictly increasing");
  std::vector<Var> branches;
  for (int i = 0; i < 3; ++i)
    branches.push_back(nn::conv2d(t, x, ws[static_cast<size_t>(i)], bs[static_cast<size_t>(i)],
                                  1, rates[static_cast<size_t>(i)], Padding::SAME,
                                  Activation::LEAKY_RELU, leaky_slope));
  Var cat = nn::concat_last(t, branches);
  return se_block(t, cat, se_w1, se_b1, se_w2, se_b2);
}

// ---------------------------------------------------------------------------

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.family == ModelFamily::LENET_TYPE)
    build_lenet();
  else
    build_custom();
}

int Network::add_param(const std::string& name, std::vector<int> shape) {
  Param p;
  p.name = name;
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

void Network::build_lenet() {
  const int k = cfg_.kernel_size;
  int cin = cfg_.input_c;
  for (size_t i = 0; i < cfg_.block_widths.size(); ++i) {
    const int cout = cfg_.block_widths[i];
    const std::string base = "conv" + std::to_string(i + 1);
    int w = add_param(base + "/w", {k, k, cin, cout});
    int b = add_param(base + "/b", {cout});
    lenet_convs_.emplace_back(w, b);
    cin = cout;
  }
  const int pools = cfg_.num_pool_stages();
  const int spatial = (cfg_.input_h >> pools) * (cfg_.input_w >> pools);
  int fan = spatial * cin;
  for (size_t i = 0; i < cfg_.mlp_widths.size(); ++i) {
    const std::string base = "dense" + std::to_string(i + 1);
    int w = add_param(base + "/w", {fan, cfg_.mlp_widths[i]});
    int b = add_param(base + "/b", {cfg_.mlp_widths[i]});
    mlp_.emplace_back(w, b);
    fan = cfg_.mlp_widths[i];
  }
  latent_layer_ = {add_param("latent/w", {fan, cfg_.latent_dim}),
                   add_param("latent/b", {cfg_.latent_dim})};
  if (cfg_.head == Head::SIGMOID_CLASSIFIER)
    classifier_ = {add_param("classifier/w", {cfg_.latent_dim, 1}), add_param("classifier/b", {1})};
}

void Network::build_custom() {
  const int k = cfg_.kernel_size;
  int cin = cfg_.input_c;
  int fused = 0;
  for (size_t i = 0; i < cfg_.block_widths.size(); ++i) {
    const int w = cfg_.block_widths[i];
    const std::string base = "block" + std::to_string(i + 1);
    BlockSpec spec{};
    for (int br = 0; br < 3; ++br) {
      const std::string bb = base + "/branch" + std::to_string(br + 1);
      spec.branches[static_cast<size_t>(br)] = {
          add_param(bb + "/w", {k, k, cin, w}), add_param(bb + "/b", {w}),
          cfg_.dilation_rates[static_cast<size_t>(br)]};
    }
    const int cat = 3 * w;
    const int mid = cat / cfg_.se_reduction;
    spec.se_w1 = add_param(base + "/se/w1", {cat, mid});
    spec.se_b1 = add_param(base + "/se/b1", {mid});
    spec.se_w2 = add_param(base + "/se/w2", {mid, cat});
    spec.se_b2 = add_param(base + "/se/b2", {cat});
    blocks_.push_back(spec);
    fused += cat;
    cin = cat;
  }
  int fan = fused;
  for (size_t i = 0; i < cfg_.mlp_widths.size(); ++i) {
    const std::string base = "mlp" + std::to_string(i + 1);
    int w = add_param(base + "/w", {fan, cfg_.mlp_widths[i]});
    int b = add_param(base + "/b", {cfg_.mlp_widths[i]});
    mlp_.emplace_back(w, b);
    fan = cfg_.mlp_widths[i];
  }
  latent_layer_ = {add_param("latent/w", {fan, cfg_.latent_dim}),
                   add_param("latent/b", {cfg_.latent_dim})};
  if (cfg_.head == Head::SIGMOID_CLASSIFIER)
    classifier_ = {add_param("classifier/w", {cfg_.latent_dim, 1}), add_param("classifier/b", {1})};
}

void Network::init_params(uint64_t seed) {
  Rng rng(mix64(seed ^ 0xC0FFEEULL));
  for (Param& p : params_) {
    if (p.value.rank() == 1) {
      std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    } else if (p.value.rank() == 2) {
      xavier_uniform(p.value, p.value.dim(0), p.value.dim(1), rng);
    } else {
      // conv kernel [kh,kw,cin,cout]
      const int rf = p.value.dim(0) * p.value.dim(1);
      xavier_uniform(p.value, rf * p.value.dim(2), rf * p.value.dim(3), rng);
    }
  }
  zero_grads();
}

void Network::zero_grads() {
  for (Param& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

Param& Network::param(const std::string& name) {
  for (Param& p : params_)
    if (p.name == name) return p;
  throw ConfigError("no parameter named '" + name + "'");
}

Param& Network::final_bias() { return params_[static_cast<size_t>(latent_layer_.second)]; }

int64_t Network::param_count() const {
  int64_t n = 0;
  for (const Param& p : params_) n += p.value.numel();
  return n;
}

std::vector<Tensor> Network::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const Param& p : params_) out.push_back(p.value);
  return out;
}

void Network::restore(const std::vector<Tensor>& values) {
  check_config(values.size() == params_.size(), "snapshot size mismatch");
  for (size_t i = 0; i < values.size(); ++i) {
    check_config(values[i].same_shape(params_[i].value), "snapshot shape mismatch");
    params_[i].value = values[i];
  }
}

Var Network::forward(Tape& t, Var images, bool training, Rng* dropout_rng) {
  const Tensor& img = t.value(images);
  check_config(img.rank() == 4, "forward: images must be rank-4 (N,H,W,C)");
  check_config(img.dim(1) == cfg_.input_h && img.dim(2) == cfg_.input_w &&
                   img.dim(3) == cfg_.input_c,
               "forward: image shape " + img.shape_str() + " does not match configured input " +
                   std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w) + "x" +
                   std::to_string(cfg_.input_c));
  check_config(!training || cfg_.dropout == 0.0 || dropout_rng != nullptr,
               "training forward with dropout requires an RNG");

  auto leaf = [&](int idx) { return t.leaf(params_[static_cast<size_t>(idx)].value,
                                           &params_[static_cast<size_t>(idx)].grad); };

  Var x = images;
  if (cfg_.family == ModelFamily::LENET_TYPE) {
    for (auto [w, b] : lenet_convs_) {
      x = nn::conv2d(t, x, leaf(w), leaf(b), 1, 1, Padding::SAME, Activation::LEAKY_RELU,
                     cfg_.leaky_relu_slope);
      x = nn::maxpool2x2(t, x);
    }
    x = nn::flatten(t, x);
  } else {
    std::vector<Var> taps;
    for (const BlockSpec& blk : blocks_) {
      std::array<Var, 3> ws{leaf(blk.branches[0].w_idx), leaf(blk.branches[1].w_idx),
                            leaf(blk.branches[2].w_idx)};
      std::array<Var, 3> bs{leaf(blk.branches[0].b_idx), leaf(blk.branches[1].b_idx),
                            leaf(blk.branches[2].b_idx)};
      x = se_dilated_block(t, x, cfg_.dilation_rates, cfg_.leaky_relu_slope, ws, bs,
                           leaf(blk.se_w1), leaf(blk.se_b1), leaf(blk.se_w2), leaf(blk.se_b2));
      taps.push_back(nn::global_avg_pool(t, x));
      x = nn::maxpool2x2(t, x);
    }
    x = nn::concat_last(t, taps);  // DenseNet-style fusion of per-block descriptors
  }

  for (auto [w, b] : mlp_) {
    x = nn::leaky_relu(t, nn::dense(t, x, leaf(w), leaf(b)), cfg_.leaky_relu_slope);
    if (cfg_.dropout > 0.0 && training) x = nn::dropout(t, x, cfg_.dropout, *dropout_rng, true);
  }
  x = nn::dense(t, x, leaf(latent_layer_.first), leaf(latent_layer_.second));
  if (cfg_.head == Head::SIGMOID_CLASSIFIER)
    x = nn::sigmoid(t, nn::dense(t, x, leaf(classifier_.first), leaf(classifier_.second)));
  return x;
}

Tensor Network::forward_batch(const Tensor& images) {
  Tape t;
  Var out = forward(t, t.leaf(images), false, nullptr);
  return t.value(out);
}

Network build_network(const ModelConfig& cfg) { return Network(cfg); }

}  // namespace cdcm::models
