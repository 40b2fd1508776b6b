#pragma once

#include <functional>
#include <vector>

#include "cdcm/tensor.hpp"

namespace cdcm::nn {

// Reverse-mode autodiff tape. A tape is built per forward pass; ops evaluate
// eagerly and record a backward closure. backward() walks the nodes in reverse
// and frees each node's buffers as soon as its closure has run, which keeps
// the peak footprint close to the forward activation total.
class Tape;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Padding { SAME, VALID };
enum class Activation { NONE, LEAKY_RELU };

class Tape {
public:
  // Leaf with an external gradient sink (parameters, or inputs under test).
  // On backward() the leaf's gradient is accumulated into *grad_sink.
  Var leaf(const Tensor& value, Tensor* grad_sink);
  // Leaf that does not require a gradient (e.g. input images during training).
  Var leaf(const Tensor& value);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }

  // Runs reverse accumulation from a scalar output. Consumes the tape: node
  // buffers are released as the sweep passes them.
  void backward(Var scalar_output);

  size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor value;
    Tensor grad;                 // allocated lazily
    bool needs_grad = false;
    Tensor* grad_sink = nullptr;
    std::function<void(Tape&)> backward_fn;  // empty for leaves
  };

  std::vector<Node> nodes_;

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> fn);
  Tensor& grad_ref(int id);
  Tensor* grad_if_any(int id);
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  void accumulate(int id, const double* src, int64_t n);

  friend Var dense(Tape&, Var, Var, Var);
  friend Var conv2d(Tape&, Var, Var, Var, int, int, Padding, Activation, double);
  friend Var maxpool2x2(Tape&, Var);
  friend Var leaky_relu(Tape&, Var, double);
  friend Var sigmoid(Tape&, Var);
  friend Var global_avg_pool(Tape&, Var);
  friend Var concat_last(Tape&, const std::vector<Var>&);
  friend Var scale_channels(Tape&, Var, Var);
  friend Var dropout(Tape&, Var, double, Rng&, bool);
  friend Var flatten(Tape&, Var);
  friend Var euclidean_distance(Tape&, Var, const Tensor&);
  friend Var mean_squared_distance(Tape&, Var, const Tensor&);
  friend Var custom_loss_node(Tape&, Var, std::function<double(const Tensor&, Tensor&)>);
};

// x:[N,F] W:[F,O] b:[O] -> [N,O]
Var dense(Tape&, Var x, Var w, Var b);

// x:[N,H,W,C] w:[kh,kw,Cin,Cout] b:[Cout]; optional fused leaky ReLU.
Var conv2d(Tape&, Var x, Var w, Var b, int stride, int dilation, Padding pad,
           Activation act = Activation::NONE, double leaky_slope = 0.0);

// 2x2 window, stride 2; requires even spatial dims.
Var maxpool2x2(Tape&, Var x);

Var leaky_relu(Tape&, Var x, double slope);
Var sigmoid(Tape&, Var x);

// [N,H,W,C] -> [N,C]
Var global_avg_pool(Tape&, Var x);

// Concatenate along the last axis; leading dims must match.
Var concat_last(Tape&, const std::vector<Var>& xs);

// x:[N,H,W,C] * gates:[N,C] broadcast over H,W (squeeze-and-excitation apply).
Var scale_channels(Tape&, Var x, Var gates);

// Inverted dropout; identity when !training or rate == 0.
Var dropout(Tape&, Var x, double rate, Rng& rng, bool training);

// [N, ...] -> [N, prod(rest)]
Var flatten(Tape&, Var x);

// latent:[N,D], fixed center[D] -> distances [N]. Euclidean norm per row;
// subgradient 0 at the (measure-zero) point latent == center.
Var euclidean_distance(Tape&, Var latent, const Tensor& center);

// Scalar-output node defined by a kernel computing (value, d value/d input).
// fn receives the input tensor and must fill the gradient tensor (same shape)
// and return the scalar value. Used to lift the loss kernels onto the tape.
Var custom_loss_node(Tape&, Var input, std::function<double(const Tensor&, Tensor&)> fn);

// Configure/query GEMM threading (forwards to Eigen + OpenMP).
void set_num_threads(int n);
int num_threads();

}  // namespace cdcm::nn
