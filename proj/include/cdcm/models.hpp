#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cdcm/tape.hpp"
#include "cdcm/tensor.hpp"

namespace cdcm::models {

enum class ModelFamily { LENET_TYPE, CUSTOM_SE_DILATED };
enum class Head { METRIC, SIGMOID_CLASSIFIER };

std::string to_string(ModelFamily f);
std::string to_string(Head h);
ModelFamily model_family_from_string(const std::string& s);
Head head_from_string(const std::string& s);

// Parameter budget of the 50-layer residual reference used for the
// "light-weight" sanity check.
inline constexpr int64_t kResNet50ReferenceParams = 25'600'000;

struct ModelConfig {
  ModelFamily family = ModelFamily::LENET_TYPE;
  int input_h = 32, input_w = 32, input_c = 3;
  int latent_dim = 128;
  Head head = Head::METRIC;
  int kernel_size = 5;
  double leaky_relu_slope = 0.01;
  double dropout = 0.0;
  std::array<int, 3> dilation_rates{1, 2, 4};  // custom family only
  int se_reduction = 4;                        // custom family only
  std::vector<int> block_widths;  // conv widths (lenet) / per-branch widths (custom)
  std::vector<int> mlp_widths;    // hidden dense widths before the latent layer

  // Canonical configurations: 32x32x3 LeNet-type stack and the 256x256x3
  // SE-Dilated model. Field values beyond the paper-stated ones are recorded
  // artifact defaults and can be overridden.
  static ModelConfig lenet(Head head = Head::METRIC);
  static ModelConfig custom_se_dilated(Head head = Head::METRIC);

  void validate() const;
  int num_pool_stages() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Param {
  std::string name;
  nn::Tensor value;
  nn::Tensor grad;
};

// A parameterized network: owns named parameters and knows how to wire its
// forward graph onto a tape. METRIC head emits [N, latent_dim]; the sigmoid
// classifier head emits [N, 1] probabilities.
class Network {
public:
  explicit Network(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // Xavier-uniform weights, zero biases.
  void init_params(uint64_t seed);

  nn::Var forward(nn::Tape& tape, nn::Var images, bool training = false,
                  Rng* dropout_rng = nullptr);

  // Convenience inference pass (no gradients kept).
  nn::Tensor forward_batch(const nn::Tensor& images);

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& param(const std::string& name);
  // Bias of the affine layer producing the latent representation; this is the
  // term that realizes the center-shift construction.
  Param& final_bias();
  int64_t param_count() const;
  void zero_grads();

  std::vector<nn::Tensor> snapshot() const;
  void restore(const std::vector<nn::Tensor>& values);

private:
  struct ConvSpec {
    int w_idx, b_idx, dilation;
  };
  struct BlockSpec {
    std::array<ConvSpec, 3> branches;
    int se_w1, se_b1, se_w2, se_b2;
  };

  ModelConfig cfg_;
  std::vector<Param> params_;
  // lenet wiring
  std::vector<std::pair<int, int>> lenet_convs_;
  // custom wiring
  std::vector<BlockSpec> blocks_;
  std::vector<std::pair<int, int>> mlp_;
  std::pair<int, int> latent_layer_{-1, -1};
  std::pair<int, int> classifier_{-1, -1};

  int add_param(const std::string& name, std::vector<int> shape);
  void build_lenet();
  void build_custom();
};

Network build_network(const ModelConfig& cfg);

// Squeeze-and-excitation gating: gates in (0,1) from globally pooled channel
// descriptors through a bottleneck (ReLU) and a sigmoid. Returns x scaled
// channel-wise; shape preserved.
nn::Var se_block(nn::Tape& t, nn::Var x, nn::Var w1, nn::Var b1, nn::Var w2, nn::Var b2);

// Three parallel dilated convolutions (same spatial size, strictly increasing
// rates), channel-concatenated and passed through se_block.
nn::Var se_dilated_block(nn::Tape& t, nn::Var x, const std::array<int, 3>& rates,
                         double leaky_slope, const std::array<nn::Var, 3>& ws,
                         const std::array<nn::Var, 3>& bs, nn::Var se_w1, nn::Var se_b1,
                         nn::Var se_w2, nn::Var se_b2);

// Test/utility helper: freshly initialized SE parameters for a channel count.
struct SeParams {
  nn::Tensor w1, b1, w2, b2;
  static SeParams init(int channels, int reduction, Rng& rng);
};

void xavier_uniform(nn::Tensor& t, int fan_in, int fan_out, Rng& rng);

}  // namespace cdcm::models
