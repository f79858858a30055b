#include "fedsgc/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedsgc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr double kPi = 3.14159265358979323846;

}  // namespace

std::size_t SparsityPlan::total_weights() const {
  std::size_t n = 0;
  for (auto w : layer_sizes) n += w;
  return n;
}

std::size_t SparsityPlan::layer_zero_target(std::size_t l) const {
  return round_half_up(per_layer[l] * static_cast<double>(layer_sizes[l]));
}

std::size_t SparsityPlan::target_zero_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < per_layer.size(); ++l) n += layer_zero_target(l);
  return n;
}

void PruneGrowConfig::validate() const {
  if (alpha < 0.0) fail("alpha must be >= 0");
  if (lambda < 0.0 || lambda > 1.0) fail("lambda must be in [0,1]");
  if (delta_T < 1 || delta_R < 1) fail("delta_T and delta_R must be >= 1");
}

SparsityPlan erk_allocate(const std::vector<LayerSpec>& layers, double target_S) {
  if (layers.empty()) fail("erk_allocate: no layers");
  if (!(target_S >= 0.0) || target_S >= 1.0) {
    fail("erk_allocate: target_S must be in [0,1)");
  }
  const std::size_t L = layers.size();
  std::vector<double> sizes(L), raw(L);
  double total = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& s = layers[l];
    if (s.fan_in < 1 || s.fan_out < 1) fail("erk_allocate: invalid layer dims");
    sizes[l] = static_cast<double>(s.weight_count());
    if (s.kind == LayerKind::dense) {
      raw[l] = (static_cast<double>(s.fan_in) + s.fan_out) / sizes[l];
    } else {
      raw[l] = (static_cast<double>(s.fan_in) + s.fan_out + s.kernel_h + s.kernel_w) /
               sizes[l];
    }
    total += sizes[l];
  }

  std::vector<bool> frozen(L, false);
  std::vector<double> density(L, 1.0);
  for (;;) {
    double budget = (1.0 - target_S) * total;
    double denom = 0.0;
    std::size_t open = 0;
    for (std::size_t l = 0; l < L; ++l) {
      if (frozen[l]) {
        budget -= sizes[l];
      } else {
        denom += raw[l] * sizes[l];
        ++open;
      }
    }
    if (open == 0) {
      if (budget < -0.5) {
        fail("erk_allocate: all layers dense but target sparsity unreachable");
      }
      break;
    }
    if (budget <= 0.0) {
      fail("erk_allocate: frozen dense layers already exceed the density budget");
    }
    const double eps = budget / denom;
    bool froze = false;
    for (std::size_t l = 0; l < L; ++l) {
      if (!frozen[l] && eps * raw[l] >= 1.0) {
        frozen[l] = true;
        density[l] = 1.0;
        froze = true;
      }
    }
    if (!froze) {
      for (std::size_t l = 0; l < L; ++l) {
        if (!frozen[l]) density[l] = eps * raw[l];
      }
      break;
    }
  }

  SparsityPlan plan;
  plan.target_S = target_S;
  plan.per_layer.resize(L);
  plan.layer_sizes.resize(L);
  double zero_mass = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    plan.per_layer[l] = std::clamp(1.0 - density[l], 0.0, 1.0);
    plan.layer_sizes[l] = layers[l].weight_count();
    zero_mass += plan.per_layer[l] * sizes[l];
  }
  if (std::abs(zero_mass - target_S * total) > 1.0) {
    std::ostringstream os;
    os << "erk_allocate: allocation misses target (" << zero_mass << " vs "
       << target_S * total << ")";
    throw std::logic_error(os.str());
  }
  return plan;
}

double sigma_schedule(long long t_c, long long T_end_c, double alpha) {
  if (T_end_c <= 0) fail("sigma_schedule: T_end_c must be > 0");
  if (t_c < 0 || t_c > T_end_c) fail("sigma_schedule: t_c out of [0, T_end_c]");
  if (alpha < 0.0) fail("sigma_schedule: alpha must be >= 0");
  return alpha / 2.0 *
         (1.0 + std::cos(static_cast<double>(t_c) * kPi / static_cast<double>(T_end_c)));
}

namespace {

void check_layer_spans(std::size_t w, std::size_t m, std::size_t d, std::size_t p,
                       const char* who) {
  if (m != w || d != w || p != w) {
    fail(std::string(who) + ": span lengths disagree with weight length");
  }
}

}  // namespace

PruneResult prune_layer(std::span<const double> weights,
                        std::span<const std::uint8_t> mask,
                        std::span<const std::int8_t> direction,
                        std::span<const double> pseudo_grad, double layer_sparsity,
                        double sigma_c, double lambda) {
  check_layer_spans(weights.size(), mask.size(), direction.size(), pseudo_grad.size(),
                    "prune_layer");
  if (layer_sparsity < 0.0 || layer_sparsity >= 1.0) {
    fail("prune_layer: layer_sparsity must be in [0,1)");
  }
  if (sigma_c < 0.0) fail("prune_layer: sigma_c must be >= 0");
  if (lambda < 0.0 || lambda > 1.0) fail("prune_layer: lambda must be in [0,1]");

  const std::size_t W = weights.size();
  PruneResult res;
  res.mask.assign(mask.begin(), mask.end());

  std::size_t zeros = 0;
  for (auto m : mask) zeros += (m == 0);
  const double sbar = layer_sparsity + sigma_c * (1.0 - layer_sparsity);
  const std::size_t target_zeros = std::min(W, round_half_up(sbar * static_cast<double>(W)));
  if (target_zeros <= zeros) return res;  // already at or beyond the over-pruned level
  const std::size_t k = target_zeros - zeros;

  std::vector<std::size_t> conflict, rest;
  conflict.reserve(W - zeros);
  rest.reserve(W - zeros);
  for (std::size_t i = 0; i < W; ++i) {
    if (!mask[i]) continue;
    const int d = direction[i];
    const int s = sign_of(pseudo_grad[i]);
    if (d != 0 && s != 0 && d == -s) {
      conflict.push_back(i);
    } else {
      rest.push_back(i);
    }
  }

  auto by_abs_weight_asc = [&](std::size_t a, std::size_t b) {
    const double wa = std::abs(weights[a]);
    const double wb = std::abs(weights[b]);
    return wa != wb ? wa < wb : a < b;
  };
  std::sort(conflict.begin(), conflict.end(), by_abs_weight_asc);

  const std::size_t guided_target = std::min(round_half_up(lambda * static_cast<double>(k)), k);
  const std::size_t n_guided = std::min(guided_target, conflict.size());
  res.pruned.assign(conflict.begin(), conflict.begin() + static_cast<std::ptrdiff_t>(n_guided));

  // spill: leftover conflict indices rejoin the magnitude pool
  rest.insert(rest.end(), conflict.begin() + static_cast<std::ptrdiff_t>(n_guided),
              conflict.end());
  std::sort(rest.begin(), rest.end(), by_abs_weight_asc);
  const std::size_t n_mag = k - n_guided;
  res.pruned.insert(res.pruned.end(), rest.begin(),
                    rest.begin() + static_cast<std::ptrdiff_t>(std::min(n_mag, rest.size())));

  for (auto i : res.pruned) res.mask[i] = 0;
  std::sort(res.pruned.begin(), res.pruned.end());
  return res;
}

GrowResult grow_layer(std::span<const double> dense_grads,
                      std::span<const std::uint8_t> mask,
                      std::span<const std::int8_t> direction,
                      std::span<const double> pseudo_grad, std::size_t grow_count,
                      double lambda) {
  check_layer_spans(dense_grads.size(), mask.size(), direction.size(),
                    pseudo_grad.size(), "grow_layer");
  if (lambda < 0.0 || lambda > 1.0) fail("grow_layer: lambda must be in [0,1]");

  const std::size_t W = dense_grads.size();
  GrowResult res;
  res.mask.assign(mask.begin(), mask.end());
  if (grow_count == 0) return res;

  std::vector<std::size_t> congruent, rest;
  for (std::size_t i = 0; i < W; ++i) {
    if (mask[i]) continue;
    const int d = direction[i];
    const int s = sign_of(pseudo_grad[i]);
    if (d != 0 && s != 0 && d == s) {
      congruent.push_back(i);
    } else {
      rest.push_back(i);
    }
  }
  const std::size_t inactive = congruent.size() + rest.size();
  std::size_t k_hat = grow_count;
  if (k_hat > inactive) {
    res.clamped = true;
    k_hat = inactive;
  }

  auto by_abs_grad_desc = [&](std::size_t a, std::size_t b) {
    const double ga = std::abs(dense_grads[a]);
    const double gb = std::abs(dense_grads[b]);
    return ga != gb ? ga > gb : a < b;
  };
  std::sort(congruent.begin(), congruent.end(), by_abs_grad_desc);

  const std::size_t guided_target =
      std::min(round_half_up(lambda * static_cast<double>(k_hat)), k_hat);
  const std::size_t n_guided = std::min(guided_target, congruent.size());
  res.grown.assign(congruent.begin(),
                   congruent.begin() + static_cast<std::ptrdiff_t>(n_guided));

  rest.insert(rest.end(), congruent.begin() + static_cast<std::ptrdiff_t>(n_guided),
              congruent.end());
  std::sort(rest.begin(), rest.end(), by_abs_grad_desc);
  const std::size_t n_mag = k_hat - n_guided;
  res.grown.insert(res.grown.end(), rest.begin(),
                   rest.begin() + static_cast<std::ptrdiff_t>(std::min(n_mag, rest.size())));

  for (auto i : res.grown) res.mask[i] = 1;
  std::sort(res.grown.begin(), res.grown.end());
  return res;
}

void readjust(MaskedModel& model, const SparsityPlan& plan, const DirectionMap& direction,
              const PseudoGradient& pseudo_grad, const Gradients& dense_grads,
              double sigma_c, double lambda) {
  const std::size_t L = model.layers.size();
  if (plan.per_layer.size() != L || direction.size() != L || pseudo_grad.size() != L ||
      dense_grads.weights.size() != L) {
    fail("readjust: per-layer structure mismatch");
  }
  for (std::size_t l = 0; l < L; ++l) {
    auto& ml = model.layers[l];
    const std::size_t W = ml.weights.size();
    if (plan.layer_sizes[l] != W || direction[l].size() != W ||
        pseudo_grad[l].size() != W || dense_grads.weights[l].size() != W) {
      fail("readjust: layer size mismatch");
    }

    PruneResult pr = prune_layer(ml.weights, ml.mask, direction[l], pseudo_grad[l],
                                 plan.per_layer[l], sigma_c, lambda);
    ml.mask = std::move(pr.mask);
    for (auto i : pr.pruned) ml.weights[i] = 0.0;

    std::size_t zeros = 0;
    for (auto m : ml.mask) zeros += (m == 0);
    const std::size_t plan_zeros = plan.layer_zero_target(l);
    const std::size_t k_hat = zeros > plan_zeros ? zeros - plan_zeros : 0;

    GrowResult gr = grow_layer(dense_grads.weights[l], ml.mask, direction[l],
                               pseudo_grad[l], k_hat, lambda);
    if (gr.clamped) {
      std::cerr << "readjust: grow request exceeded inactive count at layer " << l
                << "\n";
    }
    ml.mask = std::move(gr.mask);
    // grown weights were masked, i.e. already exactly 0.0
  }
}

DirectionMap direction_map(const MaskedModel& newer, const MaskedModel& older) {
  if (newer.layers.size() != older.layers.size()) {
    fail("direction_map: layer count mismatch");
  }
  DirectionMap d(newer.layers.size());
  for (std::size_t l = 0; l < newer.layers.size(); ++l) {
    const auto& a = newer.layers[l].weights;
    const auto& b = older.layers[l].weights;
    if (a.size() != b.size()) fail("direction_map: layer shape mismatch");
    d[l].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      d[l][i] = static_cast<std::int8_t>(sign_of(a[i] - b[i]));
    }
  }
  return d;
}

DirectionMap zero_direction(const MaskedModel& model) {
  DirectionMap d(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    d[l].assign(model.layers[l].weights.size(), 0);
  }
  return d;
}

PseudoGradient pseudo_gradient(const MaskedModel& current,
                               const MaskedModel& round_start) {
  if (current.layers.size() != round_start.layers.size()) {
    fail("pseudo_gradient: layer count mismatch");
  }
  PseudoGradient pg(current.layers.size());
  for (std::size_t l = 0; l < current.layers.size(); ++l) {
    const auto& a = current.layers[l].weights;
    const auto& b = round_start.layers[l].weights;
    if (a.size() != b.size()) fail("pseudo_gradient: layer shape mismatch");
    pg[l].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) pg[l][i] = a[i] - b[i];
  }
  return pg;
}

void init_topology(MaskedModel& model, const SparsityPlan& plan, Rng& topology_stream) {
  if (plan.per_layer.size() != model.layers.size()) {
    fail("init_topology: plan does not match model");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& ml = model.layers[l];
    const std::size_t W = ml.weights.size();
    if (plan.layer_sizes[l] != W) fail("init_topology: layer size mismatch");
    const std::size_t zeros = std::min(W, plan.layer_zero_target(l));
    std::vector<std::size_t> idx(W);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < zeros; ++i) {
      const std::size_t j = i + topology_stream.uniform_index(W - i);
      std::swap(idx[i], idx[j]);
    }
    ml.mask.assign(W, 1);
    for (std::size_t i = 0; i < zeros; ++i) {
      ml.mask[idx[i]] = 0;
      ml.weights[idx[i]] = 0.0;
    }
  }
}

}  // namespace fedsgc
