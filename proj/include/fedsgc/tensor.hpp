#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsgc/rng.hpp"

namespace fedsgc {

struct Dataset;  // data.hpp

enum class LayerKind { dense, conv2d };
enum class Activation { relu, none, softmax_output };
enum class OptKind { sgd, adam };

// Weights are flat per-layer vectors. Dense: w[o*fan_in + i]. Conv:
// w[((o*fan_in + i)*kernel_h + ky)*kernel_w + kx], i.e. (out, in, kh, kw)
// order. Conv layers use valid padding, stride 1, and a 2x2 max-pool after
// the activation. Feature maps are stored channel-major: ((c*H)+y)*W + x.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int fan_in = 0;   // dense: input units; conv: input channels
  int fan_out = 0;  // dense: output units; conv: output channels
  int kernel_h = 0;
  int kernel_w = 0;
  Activation activation = Activation::relu;

  std::size_t weight_count() const {
    if (kind == LayerKind::dense) {
      return static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out);
    }
    return static_cast<std::size_t>(fan_out) * static_cast<std::size_t>(fan_in) *
           static_cast<std::size_t>(kernel_h) * static_cast<std::size_t>(kernel_w);
  }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int input_h = 1;
  int input_w = 1;
  int input_c = 1;

  int input_dim() const { return input_h * input_w * input_c; }
  int num_classes() const { return layers.empty() ? 0 : layers.back().fan_out; }
  std::size_t weight_count() const;
  void validate() const;
};

// dims = {input, hidden..., classes}; hidden layers ReLU, last softmax.
NetworkSpec mlp_spec(const std::vector<int>& dims);
// Two 5x5 conv layers + one hidden dense layer + softmax, for h x w x c input.
NetworkSpec conv2_spec(int input_h, int input_w, int input_c, int conv1,
                       int conv2, int fc, int classes);
// Three 5x5 conv layers + one hidden dense layer + softmax.
NetworkSpec conv3_spec(int input_h, int input_w, int input_c, int conv1,
                       int conv2, int conv3, int fc, int classes);

struct MaskedLayer {
  std::vector<double> weights;      // flat, exactly 0.0 where mask == 0
  std::vector<double> bias;         // unmasked, always trained
  std::vector<std::uint8_t> mask;   // 1 = active
};

struct MaskedModel {
  NetworkSpec spec;
  std::vector<MaskedLayer> layers;

  // He-uniform weights, zero biases, all-ones mask.
  static MaskedModel he_uniform_init(const NetworkSpec& spec, Rng& init_stream);

  std::size_t weight_count() const;
  std::size_t zero_count() const;    // by mask
  double sparsity() const;           // zero fraction over weights
  std::vector<double> layer_sparsities() const;
  void apply_mask();                 // force weights to 0.0 where mask == 0
  void check_mask_invariant() const;
};

struct Batch {
  std::vector<double> inputs;  // batch_size x input_dim, row-major
  std::vector<int> labels;
  int batch_size = 0;
  int input_dim = 0;
};

// Per-layer activation record kept for backward.
struct LayerTrace {
  std::vector<double> pre;              // pre-activation (conv/dense output)
  std::vector<double> out;              // after activation (+ pool for conv)
  std::vector<std::int32_t> pool_argmax;  // conv: winner index per pooled cell
  int in_h = 1, in_w = 1, in_c = 1;
  int conv_h = 1, conv_w = 1;           // conv only
  int out_h = 1, out_w = 1, out_c = 1;
};

struct ForwardCache {
  const MaskedModel* model = nullptr;
  int batch_size = 0;
  std::vector<double> input;
  std::vector<int> labels;
  std::vector<LayerTrace> traces;
  std::vector<double> probs;  // batch_size x classes
};

struct ForwardResult {
  double loss = 0.0;  // mean cross-entropy over the batch
  ForwardCache cache;
};

ForwardResult forward(const MaskedModel& model, const Batch& batch);

struct Gradients {
  // Dense gradients at every weight index, masked or not (the grow criterion
  // needs gradients of inactive weights).
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
};

struct ProxTerm {
  double mu = 0.0;
  const MaskedModel* anchor = nullptr;
};

Gradients backward(const MaskedModel& model, const ForwardCache& cache,
                   const std::optional<ProxTerm>& prox = std::nullopt);

struct OptimizerState {
  OptKind kind = OptKind::sgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<std::vector<double>> m_w, v_w, m_b, v_b;  // adam only

  static OptimizerState make_sgd(double lr);
  static OptimizerState make_adam(double lr, const MaskedModel& model,
                                  double beta1 = 0.9, double beta2 = 0.999,
                                  double eps = 1e-8);
  static OptimizerState make(OptKind kind, double lr, const MaskedModel& model);
};

// w <- w - lr*g at mask=1 indices; mask=0 weights stay exactly 0.0; biases
// always updated.
void sgd_step(MaskedModel& model, const Gradients& grads, OptimizerState& opt);
// Bias-corrected Adam at mask=1 indices and biases; mask=0 weights stay 0.0
// and their moment entries are zeroed on every step.
void adam_step(MaskedModel& model, const Gradients& grads, OptimizerState& opt);
void optimizer_step(MaskedModel& model, const Gradients& grads, OptimizerState& opt);

// Argmax-of-softmax accuracy; ties broken by lowest class index.
double evaluate(const MaskedModel& model, const Dataset& dataset);

}  // namespace fedsgc
