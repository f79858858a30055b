#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedsgc/data.hpp"
#include "fedsgc/sparsity.hpp"
#include "fedsgc/tensor.hpp"
#include "fedsgc/wire.hpp"

namespace fedsgc {

// Sparse upload: values at mask=1 indices ascending, masks, dense biases.
struct ClientUpdate {
  int client_id = -1;
  long long n_c = 0;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<std::vector<double>> bias;
};

ClientUpdate make_update(int client_id, long long n_c, const MaskedModel& model);
Payload to_payload(const ClientUpdate& update);

struct ServerState {
  int round = 0;  // completed rounds
  MaskedModel model;
  DirectionMap dmap;  // all zeros at init
  SparsityPlan plan;
  std::vector<long long> client_sizes;
  long long total_n = 0;
  std::size_t target_zeros = 0;  // plan's integerized zero count

  static ServerState init(const NetworkSpec& spec, const SparsityPlan& plan,
                          const std::vector<long long>& client_sizes,
                          Rng& init_stream, Rng& topology_stream);
};

// Re-adjust rounds are 1-indexed: fires at r = delta_R, 2*delta_R, ... while
// r < R_end, so delta_R > R never fires.
bool is_readjust_round(int round_1idx, int delta_R, int R_end);

// Uniform without replacement over clients with n_c >= 1, ascending ids.
std::vector<int> sample_clients(Rng& rng, const std::vector<long long>& client_sizes,
                                int count);

struct ClientState {
  int id = -1;
  std::vector<int> indices;  // rows into the shared training dataset
  long long e_c = 0;         // cumulative local epochs
  Rng batch_stream;

  ClientState(int id_, std::vector<int> indices_, Rng stream)
      : id(id_), indices(std::move(indices_)), batch_stream(stream) {}
};

struct LocalConfig {
  int epochs = 1;
  int batch = 32;
  OptKind optimizer = OptKind::sgd;
  double lr = 0.01;
  double mu = 0.0;  // FedProx weight; 0 disables the proximal term
  double alpha = 0.0;
  double lambda = 0.0;
  int delta_T = 1;
  long long T_end_c = 0;
  bool readjust_round = false;
};

struct ReadjustProbe {
  std::function<void(int client_id, double model_sparsity)> after_readjust;
};

// One client round: adopt (theta_r (x) m_r, m_r), snapshot, run E epochs of
// mini-batch training (optimizer state fresh each round), re-adjust the mask
// whenever the cumulative-epoch schedule fires, return the sparse update.
ClientUpdate local_round(ClientState& client, const Dataset& train,
                         const MaskedModel& global_model,
                         const DirectionMap& global_direction,
                         const SparsityPlan& plan, const LocalConfig& cfg,
                         ReadjustProbe* probe = nullptr);

// Sparse weighted average with the non-participant term, then extra global
// pruning of the smallest-|theta| active entries back to the plan's zero
// count. Zero-denominator indices get value 0 and mask 0. Summation runs in
// ascending client-id order.
MaskedModel aggregate(const std::vector<ClientUpdate>& updates,
                      const ServerState& server);

struct RoundStats {
  double global_sparsity = 0.0;
};

// aggregate + direction map d_{r+1} = sign(theta_{r+1} - theta_r) + round++.
RoundStats advance_round(ServerState& server, const std::vector<ClientUpdate>& updates);

}  // namespace fedsgc
