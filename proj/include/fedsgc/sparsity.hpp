#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedsgc/tensor.hpp"

namespace fedsgc {

// Per-layer zero fractions s_l meeting a global target S = sum(s_l*W_l)/W.
struct SparsityPlan {
  double target_S = 0.0;
  std::vector<double> per_layer;
  std::vector<std::size_t> layer_sizes;

  std::size_t total_weights() const;
  std::size_t layer_zero_target(std::size_t l) const;  // round-half-up(s_l*W_l)
  std::size_t target_zero_count() const;               // sum of the above
};

// Per-layer ternary {-1,0,+1} vectors over weight indices.
using DirectionMap = std::vector<std::vector<std::int8_t>>;
// Per-layer weight displacement since round start.
using PseudoGradient = std::vector<std::vector<double>>;

struct PruneGrowConfig {
  double alpha = 0.0;   // over-prune schedule amplitude
  double lambda = 0.0;  // guided fraction
  long long T_end_c = 0;
  int delta_T = 1;
  int delta_R = 1;
  int R_end = 0;
  void validate() const;
};

inline std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

// Erdos-Renyi-Kernel allocation: density(l) = min(1, eps*r_l) with
// r_l = (fan_in+fan_out)/(fan_in*fan_out) for dense and
// (fan_in+fan_out+kh+kw)/(fan_in*fan_out*kh*kw) for conv; eps found by
// iterative re-normalization, layers hitting density 1 frozen dense.
SparsityPlan erk_allocate(const std::vector<LayerSpec>& layers, double target_S);

// sigma = alpha/2 * (1 + cos(t_c*pi/T_end_c)), in [0, alpha].
double sigma_schedule(long long t_c, long long T_end_c, double alpha);

struct PruneResult {
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> pruned;  // ascending indices
};

// Over-prunes active weights to sbar = s_l + sigma_c*(1 - s_l): first up to
// round(lambda*k) conflict-set indices (d = -sign(delta), both nonzero) in
// ascending |w| order, remainder by smallest |w| over the other active
// indices. Ties break on lowest flat index.
PruneResult prune_layer(std::span<const double> weights,
                        std::span<const std::uint8_t> mask,
                        std::span<const std::int8_t> direction,
                        std::span<const double> pseudo_grad,
                        double layer_sparsity, double sigma_c, double lambda);

struct GrowResult {
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> grown;  // ascending indices
  bool clamped = false;            // requested more than the inactive count
};

// Grows grow_count inactive indices: first up to round(lambda*k_hat) from the
// congruent set (d = sign(delta), both nonzero) in descending |g| order,
// remainder by largest |g| over the leftover inactive indices. Grown weights
// stay at 0.0.
GrowResult grow_layer(std::span<const double> dense_grads,
                      std::span<const std::uint8_t> mask,
                      std::span<const std::int8_t> direction,
                      std::span<const double> pseudo_grad,
                      std::size_t grow_count, double lambda);

// One prune-and-grow cycle over every layer; restores each layer to the plan
// sparsity within one parameter.
void readjust(MaskedModel& model, const SparsityPlan& plan,
              const DirectionMap& direction, const PseudoGradient& pseudo_grad,
              const Gradients& dense_grads, double sigma_c, double lambda);

// Elementwise sign(theta_new - theta_old) over weights; sign(0) = 0.
DirectionMap direction_map(const MaskedModel& newer, const MaskedModel& older);
DirectionMap zero_direction(const MaskedModel& model);
PseudoGradient pseudo_gradient(const MaskedModel& current,
                               const MaskedModel& round_start);

// Random sparse topology at the plan's per-layer zero counts.
void init_topology(MaskedModel& model, const SparsityPlan& plan,
                   Rng& topology_stream);

}  // namespace fedsgc
