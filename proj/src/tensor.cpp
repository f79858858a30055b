#include "fedsgc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fedsgc/data.hpp"

namespace fedsgc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string layer_tag(std::size_t l) {
  std::ostringstream os;
  os << "layer " << l;
  return os.str();
}

struct Shape {
  int h = 1, w = 1, c = 1;
  int flat() const { return h * w * c; }
};

Shape step_shape(const LayerSpec& spec, const Shape& in, std::size_t l) {
  if (spec.kind == LayerKind::dense) {
    if (in.flat() != spec.fan_in) {
      std::ostringstream os;
      os << layer_tag(l) << ": dense expects input dim " << spec.fan_in
         << ", got " << in.flat();
      fail(os.str());
    }
    return Shape{1, 1, spec.fan_out};
  }
  if (in.c != spec.fan_in) {
    std::ostringstream os;
    os << layer_tag(l) << ": conv expects " << spec.fan_in << " input channels, got "
       << in.c;
    fail(os.str());
  }
  if (in.h < spec.kernel_h || in.w < spec.kernel_w) {
    std::ostringstream os;
    os << layer_tag(l) << ": conv kernel " << spec.kernel_h << "x" << spec.kernel_w
       << " larger than input " << in.h << "x" << in.w;
    fail(os.str());
  }
  const int ch = in.h - spec.kernel_h + 1;
  const int cw = in.w - spec.kernel_w + 1;
  const int ph = ch / 2;
  const int pw = cw / 2;
  if (ph < 1 || pw < 1) {
    std::ostringstream os;
    os << layer_tag(l) << ": 2x2 max-pool output would be empty (" << ch << "x" << cw
       << ")";
    fail(os.str());
  }
  return Shape{ph, pw, spec.fan_out};
}

}  // namespace

std::size_t NetworkSpec::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight_count();
  return n;
}

void NetworkSpec::validate() const {
  if (layers.empty()) fail("network spec: at least one layer required");
  if (input_h < 1 || input_w < 1 || input_c < 1) {
    fail("network spec: input dimensions must be >= 1");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    if (s.fan_in < 1 || s.fan_out < 1) {
      fail(layer_tag(l) + ": fan_in and fan_out must be >= 1");
    }
    if (s.kind == LayerKind::conv2d && (s.kernel_h < 1 || s.kernel_w < 1)) {
      fail(layer_tag(l) + ": conv kernel dims must be >= 1");
    }
    const bool last = l + 1 == layers.size();
    if (s.activation == Activation::softmax_output) {
      if (!last) fail(layer_tag(l) + ": softmax_output only allowed on the last layer");
      if (s.kind != LayerKind::dense) {
        fail(layer_tag(l) + ": softmax_output layer must be dense");
      }
    } else if (last) {
      fail("network spec: last layer must have softmax_output activation");
    }
  }
  Shape shape{input_h, input_w, input_c};
  for (std::size_t l = 0; l < layers.size(); ++l) shape = step_shape(layers[l], shape, l);
}

NetworkSpec mlp_spec(const std::vector<int>& dims) {
  if (dims.size() < 2) fail("mlp_spec: need at least input and output dims");
  NetworkSpec spec;
  spec.input_h = 1;
  spec.input_w = 1;
  spec.input_c = dims.front();
  for (std::size_t i = 1; i < dims.size(); ++i) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.fan_in = dims[i - 1];
    l.fan_out = dims[i];
    l.activation = (i + 1 == dims.size()) ? Activation::softmax_output : Activation::relu;
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

namespace {

NetworkSpec conv_spec_impl(int input_h, int input_w, int input_c,
                           const std::vector<int>& channels, int fc, int classes) {
  NetworkSpec spec;
  spec.input_h = input_h;
  spec.input_w = input_w;
  spec.input_c = input_c;
  Shape shape{input_h, input_w, input_c};
  int in_c = input_c;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    LayerSpec conv;
    conv.kind = LayerKind::conv2d;
    conv.fan_in = in_c;
    conv.fan_out = channels[i];
    conv.kernel_h = 5;
    conv.kernel_w = 5;
    conv.activation = Activation::relu;
    spec.layers.push_back(conv);
    shape = step_shape(conv, shape, i);
    in_c = channels[i];
  }
  LayerSpec hidden;
  hidden.kind = LayerKind::dense;
  hidden.fan_in = shape.flat();
  hidden.fan_out = fc;
  hidden.activation = Activation::relu;
  spec.layers.push_back(hidden);
  LayerSpec out;
  out.kind = LayerKind::dense;
  out.fan_in = fc;
  out.fan_out = classes;
  out.activation = Activation::softmax_output;
  spec.layers.push_back(out);
  spec.validate();
  return spec;
}

}  // namespace

NetworkSpec conv2_spec(int input_h, int input_w, int input_c, int conv1, int conv2,
                       int fc, int classes) {
  return conv_spec_impl(input_h, input_w, input_c, {conv1, conv2}, fc, classes);
}

NetworkSpec conv3_spec(int input_h, int input_w, int input_c, int conv1, int conv2,
                       int conv3, int fc, int classes) {
  return conv_spec_impl(input_h, input_w, input_c, {conv1, conv2, conv3}, fc, classes);
}

MaskedModel MaskedModel::he_uniform_init(const NetworkSpec& spec, Rng& init_stream) {
  spec.validate();
  MaskedModel model;
  model.spec = spec;
  model.layers.resize(spec.layers.size());
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& ls = spec.layers[l];
    auto& ml = model.layers[l];
    const std::size_t wn = ls.weight_count();
    const double fan_in_eff =
        ls.kind == LayerKind::dense
            ? static_cast<double>(ls.fan_in)
            : static_cast<double>(ls.fan_in) * ls.kernel_h * ls.kernel_w;
    const double limit = std::sqrt(6.0 / fan_in_eff);
    ml.weights.resize(wn);
    for (std::size_t i = 0; i < wn; ++i) ml.weights[i] = init_stream.uniform(-limit, limit);
    ml.bias.assign(static_cast<std::size_t>(ls.fan_out), 0.0);
    ml.mask.assign(wn, 1);
  }
  return model;
}

std::size_t MaskedModel::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size();
  return n;
}

std::size_t MaskedModel::zero_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    for (auto m : l.mask) n += (m == 0);
  }
  return n;
}

double MaskedModel::sparsity() const {
  const std::size_t w = weight_count();
  return w == 0 ? 0.0 : static_cast<double>(zero_count()) / static_cast<double>(w);
}

std::vector<double> MaskedModel::layer_sparsities() const {
  std::vector<double> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    std::size_t z = 0;
    for (auto m : l.mask) z += (m == 0);
    out.push_back(l.mask.empty() ? 0.0 : static_cast<double>(z) / l.mask.size());
  }
  return out;
}

void MaskedModel::apply_mask() {
  for (auto& l : layers) {
    for (std::size_t i = 0; i < l.weights.size(); ++i) {
      if (!l.mask[i]) l.weights[i] = 0.0;
    }
  }
}

void MaskedModel::check_mask_invariant() const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& ml = layers[l];
    if (ml.mask.size() != ml.weights.size()) {
      fail(layer_tag(l) + ": mask length differs from weight length");
    }
    for (std::size_t i = 0; i < ml.weights.size(); ++i) {
      if (!ml.mask[i] && ml.weights[i] != 0.0) {
        fail(layer_tag(l) + ": nonzero weight at masked index");
      }
    }
  }
}

namespace {

void check_batch(const MaskedModel& model, const Batch& batch) {
  if (batch.batch_size < 1) fail("batch: batch_size must be >= 1");
  if (batch.input_dim != model.spec.input_dim()) {
    std::ostringstream os;
    os << "batch input dim " << batch.input_dim << " does not match network input dim "
       << model.spec.input_dim() << " (layer 0)";
    fail(os.str());
  }
  if (batch.inputs.size() !=
      static_cast<std::size_t>(batch.batch_size) * batch.input_dim) {
    fail("batch: inputs size inconsistent with batch_size x input_dim");
  }
  if (batch.labels.size() != static_cast<std::size_t>(batch.batch_size)) {
    fail("batch: labels size inconsistent with batch_size");
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= model.spec.num_classes()) fail("batch: label out of range");
  }
}

// Walks the network over a batch. Writes traces when cache != nullptr;
// returns the logits buffer (batch x classes).
std::vector<double> run_net(const MaskedModel& model, const double* input, int B,
                            ForwardCache* cache) {
  const auto& spec = model.spec;
  Shape shape{spec.input_h, spec.input_w, spec.input_c};
  std::vector<double> cur(input, input + static_cast<std::size_t>(B) * shape.flat());
  if (cache) cache->traces.resize(spec.layers.size());

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& ls = spec.layers[l];
    const auto& ml = model.layers[l];
    LayerTrace* tr = cache ? &cache->traces[l] : nullptr;
    if (tr) {
      tr->in_h = shape.h;
      tr->in_w = shape.w;
      tr->in_c = shape.c;
    }

    if (ls.kind == LayerKind::dense) {
      const int fan_in = ls.fan_in;
      const int fan_out = ls.fan_out;
      if (shape.flat() != fan_in) {
        fail(layer_tag(l) + ": dense input dim mismatch at forward");
      }
      std::vector<double> pre(static_cast<std::size_t>(B) * fan_out);
      for (int b = 0; b < B; ++b) {
        const double* x = cur.data() + static_cast<std::size_t>(b) * fan_in;
        double* z = pre.data() + static_cast<std::size_t>(b) * fan_out;
        for (int o = 0; o < fan_out; ++o) {
          const double* w = ml.weights.data() + static_cast<std::size_t>(o) * fan_in;
          double acc = ml.bias[static_cast<std::size_t>(o)];
          for (int i = 0; i < fan_in; ++i) acc += w[i] * x[i];
          z[o] = acc;
        }
      }
      std::vector<double> out;
      if (ls.activation == Activation::relu) {
        out.resize(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      } else {
        out = pre;  // none / softmax_output: logits pass through
      }
      if (tr) {
        tr->pre = pre;
        tr->out = out;
        tr->conv_h = 1;
        tr->conv_w = 1;
        tr->out_h = 1;
        tr->out_w = 1;
        tr->out_c = fan_out;
      }
      cur = std::move(out);
      shape = Shape{1, 1, fan_out};
    } else {
      const int C = ls.fan_in, O = ls.fan_out, KH = ls.kernel_h, KW = ls.kernel_w;
      const int H = shape.h, W = shape.w;
      const int CH = H - KH + 1, CW = W - KW + 1;
      const int PH = CH / 2, PW = CW / 2;
      std::vector<double> pre(static_cast<std::size_t>(B) * O * CH * CW);
      for (int b = 0; b < B; ++b) {
        const double* x = cur.data() + static_cast<std::size_t>(b) * C * H * W;
        double* z = pre.data() + static_cast<std::size_t>(b) * O * CH * CW;
        for (int o = 0; o < O; ++o) {
          const double bias = ml.bias[static_cast<std::size_t>(o)];
          for (int oy = 0; oy < CH; ++oy) {
            for (int ox = 0; ox < CW; ++ox) {
              double acc = bias;
              for (int ic = 0; ic < C; ++ic) {
                for (int ky = 0; ky < KH; ++ky) {
                  const double* xr = x + (static_cast<std::size_t>(ic) * H + oy + ky) * W + ox;
                  const double* wr = ml.weights.data() +
                                     ((static_cast<std::size_t>(o) * C + ic) * KH + ky) * KW;
                  for (int kx = 0; kx < KW; ++kx) acc += xr[kx] * wr[kx];
                }
              }
              z[(static_cast<std::size_t>(o) * CH + oy) * CW + ox] = acc;
            }
          }
        }
      }
      // activation
      std::vector<double> act(pre.size());
      if (ls.activation == Activation::relu) {
        for (std::size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      } else {
        act = pre;
      }
      // 2x2 max-pool, stride 2; first maximum wins on ties
      std::vector<double> pooled(static_cast<std::size_t>(B) * O * PH * PW);
      std::vector<std::int32_t> argmax;
      if (tr) argmax.resize(pooled.size());
      for (int b = 0; b < B; ++b) {
        const double* a = act.data() + static_cast<std::size_t>(b) * O * CH * CW;
        double* p = pooled.data() + static_cast<std::size_t>(b) * O * PH * PW;
        for (int o = 0; o < O; ++o) {
          for (int py = 0; py < PH; ++py) {
            for (int px = 0; px < PW; ++px) {
              double best = -1e300;
              int best_idx = 0;
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const int y = 2 * py + dy, x2 = 2 * px + dx;
                  const int idx = (o * CH + y) * CW + x2;
                  if (a[idx] > best) {
                    best = a[idx];
                    best_idx = idx;
                  }
                }
              }
              const std::size_t pidx = (static_cast<std::size_t>(o) * PH + py) * PW + px;
              p[pidx] = best;
              if (tr) {
                argmax[static_cast<std::size_t>(b) * O * PH * PW + pidx] = best_idx;
              }
            }
          }
        }
      }
      if (tr) {
        tr->pre = std::move(pre);
        tr->out = pooled;
        tr->pool_argmax = std::move(argmax);
        tr->conv_h = CH;
        tr->conv_w = CW;
        tr->out_h = PH;
        tr->out_w = PW;
        tr->out_c = O;
      }
      cur = std::move(pooled);
      shape = Shape{PH, PW, O};
    }
  }
  return cur;
}

}  // namespace

ForwardResult forward(const MaskedModel& model, const Batch& batch) {
  model.spec.validate();
  check_batch(model, batch);
  ForwardResult res;
  res.cache.model = &model;
  res.cache.batch_size = batch.batch_size;
  res.cache.input = batch.inputs;
  res.cache.labels = batch.labels;

  std::vector<double> logits = run_net(model, batch.inputs.data(), batch.batch_size,
                                       &res.cache);
  const int B = batch.batch_size;
  const int K = model.spec.num_classes();
  res.cache.probs.resize(static_cast<std::size_t>(B) * K);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* z = logits.data() + static_cast<std::size_t>(b) * K;
    double m = z[0];
    for (int k = 1; k < K; ++k) m = std::max(m, z[k]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(z[k] - m);
    const double lse = m + std::log(sum);
    double* p = res.cache.probs.data() + static_cast<std::size_t>(b) * K;
    for (int k = 0; k < K; ++k) p[k] = std::exp(z[k] - lse);
    loss -= z[batch.labels[static_cast<std::size_t>(b)]] - lse;
  }
  res.loss = loss / B;
  return res;
}

Gradients backward(const MaskedModel& model, const ForwardCache& cache,
                   const std::optional<ProxTerm>& prox) {
  if (cache.model != &model) fail("backward: cache was produced for a different model");
  if (cache.traces.size() != model.layers.size()) {
    fail("backward: cache/model layer count mismatch");
  }
  const int B = cache.batch_size;
  const auto& spec = model.spec;
  const std::size_t L = spec.layers.size();

  Gradients g;
  g.weights.resize(L);
  g.bias.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    g.weights[l].assign(model.layers[l].weights.size(), 0.0);
    g.bias[l].assign(model.layers[l].bias.size(), 0.0);
  }

  // dL/d(logits) for the softmax_output layer
  const int K = spec.num_classes();
  std::vector<double> dpre(static_cast<std::size_t>(B) * K);
  for (int b = 0; b < B; ++b) {
    const double* p = cache.probs.data() + static_cast<std::size_t>(b) * K;
    double* d = dpre.data() + static_cast<std::size_t>(b) * K;
    const int y = cache.labels[static_cast<std::size_t>(b)];
    for (int k = 0; k < K; ++k) d[k] = (p[k] - (k == y ? 1.0 : 0.0)) / B;
  }

  for (std::size_t li = L; li-- > 0;) {
    const auto& ls = spec.layers[li];
    const auto& ml = model.layers[li];
    const auto& tr = cache.traces[li];
    const double* input =
        li == 0 ? cache.input.data() : cache.traces[li - 1].out.data();

    std::vector<double> dinput;  // gradient w.r.t. this layer's input
    if (ls.kind == LayerKind::dense) {
      const int fan_in = ls.fan_in, fan_out = ls.fan_out;
      auto& gw = g.weights[li];
      auto& gb = g.bias[li];
      if (li > 0) dinput.assign(static_cast<std::size_t>(B) * fan_in, 0.0);
      for (int b = 0; b < B; ++b) {
        const double* x = input + static_cast<std::size_t>(b) * fan_in;
        const double* dz = dpre.data() + static_cast<std::size_t>(b) * fan_out;
        for (int o = 0; o < fan_out; ++o) {
          const double d = dz[o];
          if (d == 0.0) continue;
          gb[static_cast<std::size_t>(o)] += d;
          double* gwr = gw.data() + static_cast<std::size_t>(o) * fan_in;
          for (int i = 0; i < fan_in; ++i) gwr[i] += d * x[i];
          if (li > 0) {
            const double* wr = ml.weights.data() + static_cast<std::size_t>(o) * fan_in;
            double* dx = dinput.data() + static_cast<std::size_t>(b) * fan_in;
            for (int i = 0; i < fan_in; ++i) dx[i] += d * wr[i];
          }
        }
      }
    } else {
      const int C = ls.fan_in, O = ls.fan_out, KH = ls.kernel_h, KW = ls.kernel_w;
      const int H = tr.in_h, W = tr.in_w;
      const int CH = tr.conv_h, CW = tr.conv_w;
      const int PH = tr.out_h, PW = tr.out_w;
      // un-pool + activation derivative: dpre currently holds dL/d(pooled out)
      std::vector<double> dconv(static_cast<std::size_t>(B) * O * CH * CW, 0.0);
      for (int b = 0; b < B; ++b) {
        const double* dp = dpre.data() + static_cast<std::size_t>(b) * O * PH * PW;
        const std::int32_t* am =
            tr.pool_argmax.data() + static_cast<std::size_t>(b) * O * PH * PW;
        double* dc = dconv.data() + static_cast<std::size_t>(b) * O * CH * CW;
        const double* pre = tr.pre.data() + static_cast<std::size_t>(b) * O * CH * CW;
        for (std::size_t i = 0; i < static_cast<std::size_t>(O) * PH * PW; ++i) {
          const int idx = am[i];
          double d = dp[i];
          if (ls.activation == Activation::relu && pre[idx] <= 0.0) d = 0.0;
          dc[idx] += d;
        }
      }
      auto& gw = g.weights[li];
      auto& gb = g.bias[li];
      if (li > 0) dinput.assign(static_cast<std::size_t>(B) * C * H * W, 0.0);
      for (int b = 0; b < B; ++b) {
        const double* x = input + static_cast<std::size_t>(b) * C * H * W;
        const double* dz = dconv.data() + static_cast<std::size_t>(b) * O * CH * CW;
        double* dx = li > 0 ? dinput.data() + static_cast<std::size_t>(b) * C * H * W
                            : nullptr;
        for (int o = 0; o < O; ++o) {
          for (int oy = 0; oy < CH; ++oy) {
            for (int ox = 0; ox < CW; ++ox) {
              const double d = dz[(static_cast<std::size_t>(o) * CH + oy) * CW + ox];
              if (d == 0.0) continue;
              gb[static_cast<std::size_t>(o)] += d;
              for (int ic = 0; ic < C; ++ic) {
                for (int ky = 0; ky < KH; ++ky) {
                  const double* xr =
                      x + (static_cast<std::size_t>(ic) * H + oy + ky) * W + ox;
                  double* gwr = gw.data() +
                                ((static_cast<std::size_t>(o) * C + ic) * KH + ky) * KW;
                  for (int kx = 0; kx < KW; ++kx) gwr[kx] += d * xr[kx];
                  if (dx) {
                    const double* wr =
                        ml.weights.data() +
                        ((static_cast<std::size_t>(o) * C + ic) * KH + ky) * KW;
                    double* dxr =
                        dx + (static_cast<std::size_t>(ic) * H + oy + ky) * W + ox;
                    for (int kx = 0; kx < KW; ++kx) dxr[kx] += d * wr[kx];
                  }
                }
              }
            }
          }
        }
      }
    }

    if (li == 0) break;

    // convert dL/d(out of layer li-1) into dL/d(pre of layer li-1)
    const auto& pls = spec.layers[li - 1];
    const auto& ptr = cache.traces[li - 1];
    if (pls.kind == LayerKind::dense) {
      if (pls.activation == Activation::relu) {
        for (std::size_t i = 0; i < dinput.size(); ++i) {
          if (ptr.pre[i] <= 0.0) dinput[i] = 0.0;
        }
      }
      dpre = std::move(dinput);
    } else {
      // previous layer's output is pooled; unrouting happens at its own
      // iteration, so just hand over the pooled-output gradient.
      dpre = std::move(dinput);
    }
  }

  if (prox && prox->mu != 0.0) {
    if (!prox->anchor) fail("backward: prox term requires an anchor model");
    if (prox->anchor->layers.size() != model.layers.size()) {
      fail("backward: prox anchor layer count mismatch");
    }
    for (std::size_t l = 0; l < L; ++l) {
      const auto& aw = prox->anchor->layers[l].weights;
      const auto& w = model.layers[l].weights;
      if (aw.size() != w.size()) fail("backward: prox anchor shape mismatch");
      auto& gw = g.weights[l];
      for (std::size_t i = 0; i < w.size(); ++i) gw[i] += prox->mu * (w[i] - aw[i]);
    }
  }
  return g;
}

OptimizerState OptimizerState::make_sgd(double lr) {
  OptimizerState o;
  o.kind = OptKind::sgd;
  o.lr = lr;
  return o;
}

OptimizerState OptimizerState::make_adam(double lr, const MaskedModel& model,
                                         double beta1, double beta2, double eps) {
  OptimizerState o;
  o.kind = OptKind::adam;
  o.lr = lr;
  o.beta1 = beta1;
  o.beta2 = beta2;
  o.eps = eps;
  o.m_w.resize(model.layers.size());
  o.v_w.resize(model.layers.size());
  o.m_b.resize(model.layers.size());
  o.v_b.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    o.m_w[l].assign(model.layers[l].weights.size(), 0.0);
    o.v_w[l].assign(model.layers[l].weights.size(), 0.0);
    o.m_b[l].assign(model.layers[l].bias.size(), 0.0);
    o.v_b[l].assign(model.layers[l].bias.size(), 0.0);
  }
  return o;
}

OptimizerState OptimizerState::make(OptKind kind, double lr, const MaskedModel& model) {
  return kind == OptKind::sgd ? make_sgd(lr) : make_adam(lr, model);
}

namespace {

void check_grads(const MaskedModel& model, const Gradients& grads) {
  if (grads.weights.size() != model.layers.size() ||
      grads.bias.size() != model.layers.size()) {
    fail("optimizer step: gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (grads.weights[l].size() != model.layers[l].weights.size() ||
        grads.bias[l].size() != model.layers[l].bias.size()) {
      fail("optimizer step: gradient shape mismatch at " + layer_tag(l));
    }
  }
}

}  // namespace

void sgd_step(MaskedModel& model, const Gradients& grads, OptimizerState& opt) {
  if (opt.kind != OptKind::sgd) fail("sgd_step: optimizer state is not sgd");
  check_grads(model, grads);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& ml = model.layers[l];
    const auto& gw = grads.weights[l];
    for (std::size_t i = 0; i < ml.weights.size(); ++i) {
      if (ml.mask[i]) {
        ml.weights[i] -= opt.lr * gw[i];
      } else {
        ml.weights[i] = 0.0;
      }
    }
    const auto& gb = grads.bias[l];
    for (std::size_t i = 0; i < ml.bias.size(); ++i) ml.bias[i] -= opt.lr * gb[i];
  }
}

void adam_step(MaskedModel& model, const Gradients& grads, OptimizerState& opt) {
  if (opt.kind != OptKind::adam) fail("adam_step: optimizer state is not adam");
  check_grads(model, grads);
  if (opt.m_w.size() != model.layers.size()) {
    fail("adam_step: moment vectors do not match model");
  }
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& ml = model.layers[l];
    const auto& gw = grads.weights[l];
    auto& mw = opt.m_w[l];
    auto& vw = opt.v_w[l];
    for (std::size_t i = 0; i < ml.weights.size(); ++i) {
      if (!ml.mask[i]) {
        ml.weights[i] = 0.0;
        mw[i] = 0.0;
        vw[i] = 0.0;
        continue;
      }
      mw[i] = opt.beta1 * mw[i] + (1.0 - opt.beta1) * gw[i];
      vw[i] = opt.beta2 * vw[i] + (1.0 - opt.beta2) * gw[i] * gw[i];
      const double mhat = mw[i] / bc1;
      const double vhat = vw[i] / bc2;
      ml.weights[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    const auto& gb = grads.bias[l];
    auto& mb = opt.m_b[l];
    auto& vb = opt.v_b[l];
    for (std::size_t i = 0; i < ml.bias.size(); ++i) {
      mb[i] = opt.beta1 * mb[i] + (1.0 - opt.beta1) * gb[i];
      vb[i] = opt.beta2 * vb[i] + (1.0 - opt.beta2) * gb[i] * gb[i];
      const double mhat = mb[i] / bc1;
      const double vhat = vb[i] / bc2;
      ml.bias[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

void optimizer_step(MaskedModel& model, const Gradients& grads, OptimizerState& opt) {
  if (opt.kind == OptKind::sgd) {
    sgd_step(model, grads, opt);
  } else {
    adam_step(model, grads, opt);
  }
}

double evaluate(const MaskedModel& model, const Dataset& dataset) {
  if (dataset.num_samples == 0) fail("evaluate: empty dataset");
  if (dataset.dim != model.spec.input_dim()) {
    fail("evaluate: dataset dim does not match network input dim");
  }
  const int K = model.spec.num_classes();
  const int chunk = 256;
  std::vector<double> buf;
  long long correct = 0;
  for (int start = 0; start < dataset.num_samples; start += chunk) {
    const int B = std::min(chunk, dataset.num_samples - start);
    buf.assign(static_cast<std::size_t>(B) * dataset.dim, 0.0);
    for (int b = 0; b < B; ++b) {
      const float* r = dataset.row(start + b);
      for (int i = 0; i < dataset.dim; ++i) {
        buf[static_cast<std::size_t>(b) * dataset.dim + i] = r[i];
      }
    }
    std::vector<double> logits = run_net(model, buf.data(), B, nullptr);
    for (int b = 0; b < B; ++b) {
      const double* z = logits.data() + static_cast<std::size_t>(b) * K;
      int best = 0;
      for (int k = 1; k < K; ++k) {
        if (z[k] > z[best]) best = k;  // ties keep the lowest class index
      }
      correct += (best == dataset.labels[static_cast<std::size_t>(start + b)]);
    }
  }
  return static_cast<double>(correct) / dataset.num_samples;
}

}  // namespace fedsgc
