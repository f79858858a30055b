#include "fedsgc/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedsgc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

ClientUpdate make_update(int client_id, long long n_c, const MaskedModel& model) {
  ClientUpdate u;
  u.client_id = client_id;
  u.n_c = n_c;
  u.values.resize(model.layers.size());
  u.mask.resize(model.layers.size());
  u.bias.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& ml = model.layers[l];
    u.mask[l] = ml.mask;
    u.bias[l] = ml.bias;
    auto& vals = u.values[l];
    for (std::size_t i = 0; i < ml.weights.size(); ++i) {
      if (ml.mask[i]) vals.push_back(ml.weights[i]);
    }
  }
  return u;
}

Payload to_payload(const ClientUpdate& update) {
  Payload p;
  p.layers.resize(update.mask.size());
  for (std::size_t l = 0; l < update.mask.size(); ++l) {
    auto& pl = p.layers[l];
    pl.weight_len = static_cast<std::uint32_t>(update.mask[l].size());
    pl.mask = update.mask[l];
    pl.values = update.values[l];
    pl.bias = update.bias[l];
  }
  return p;
}

ServerState ServerState::init(const NetworkSpec& spec, const SparsityPlan& plan,
                              const std::vector<long long>& client_sizes,
                              Rng& init_stream, Rng& topology_stream) {
  ServerState s;
  s.model = MaskedModel::he_uniform_init(spec, init_stream);
  init_topology(s.model, plan, topology_stream);
  s.dmap = zero_direction(s.model);
  s.plan = plan;
  s.client_sizes = client_sizes;
  s.total_n = std::accumulate(client_sizes.begin(), client_sizes.end(), 0ll);
  s.target_zeros = plan.target_zero_count();
  return s;
}

bool is_readjust_round(int round_1idx, int delta_R, int R_end) {
  if (delta_R < 1) fail("is_readjust_round: delta_R must be >= 1");
  return round_1idx % delta_R == 0 && round_1idx < R_end;
}

std::vector<int> sample_clients(Rng& rng, const std::vector<long long>& client_sizes,
                                int count) {
  std::vector<int> eligible;
  for (std::size_t i = 0; i < client_sizes.size(); ++i) {
    if (client_sizes[i] >= 1) eligible.push_back(static_cast<int>(i));
  }
  const int n = static_cast<int>(eligible.size());
  if (count < 1 || count > n) {
    std::ostringstream os;
    os << "sample_clients: count " << count << " out of range for " << n
       << " eligible clients";
    fail(os.str());
  }
  std::vector<int> picks = rng.sample_without_replacement(n, count);
  std::vector<int> out;
  out.reserve(picks.size());
  for (int p : picks) out.push_back(eligible[static_cast<std::size_t>(p)]);
  return out;  // ascending because picks are ascending over an ascending list
}

ClientUpdate local_round(ClientState& client, const Dataset& train,
                         const MaskedModel& global_model,
                         const DirectionMap& global_direction, const SparsityPlan& plan,
                         const LocalConfig& cfg, ReadjustProbe* probe) {
  if (client.indices.empty()) fail("local_round: empty local dataset");
  if (cfg.batch < 1) fail("local_round: batch must be >= 1");

  MaskedModel model = global_model;  // adopt (theta_r, m_r) wholesale
  model.apply_mask();
  const MaskedModel round_start = model;  // theta_c^{r,0}, prox anchor

  OptimizerState opt = OptimizerState::make(cfg.optimizer, cfg.lr, model);
  std::optional<ProxTerm> prox;
  if (cfg.mu != 0.0) prox = ProxTerm{cfg.mu, &round_start};

  std::vector<int> order = client.indices;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    client.batch_stream.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t len =
          std::min(static_cast<std::size_t>(cfg.batch), order.size() - start);
      Batch b = make_batch(train, std::span<const int>(order).subspan(start, len));
      ForwardResult fr = forward(model, b);
      Gradients g = backward(model, fr.cache, prox);
      optimizer_step(model, g, opt);
    }
    client.e_c += 1;

    if (cfg.readjust_round && cfg.delta_T >= 1 && client.e_c % cfg.delta_T == 0 &&
        client.e_c < cfg.T_end_c) {
      const double sigma = sigma_schedule(client.e_c, cfg.T_end_c, cfg.alpha);
      const PseudoGradient delta = pseudo_gradient(model, round_start);
      // dense gradients from one fresh local mini-batch
      std::vector<int> probe_order = client.indices;
      client.batch_stream.shuffle(probe_order);
      const std::size_t len =
          std::min(static_cast<std::size_t>(cfg.batch), probe_order.size());
      Batch b = make_batch(train, std::span<const int>(probe_order).subspan(0, len));
      ForwardResult fr = forward(model, b);
      Gradients g = backward(model, fr.cache, prox);
      readjust(model, plan, global_direction, delta, g, sigma, cfg.lambda);
      if (probe && probe->after_readjust) {
        probe->after_readjust(client.id, model.sparsity());
      }
    }
  }
  return make_update(client.id, static_cast<long long>(client.indices.size()), model);
}

MaskedModel aggregate(const std::vector<ClientUpdate>& updates, const ServerState& server) {
  if (updates.empty()) fail("aggregate: at least one update required");

  // ascending client-id summation order
  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });

  const std::size_t L = server.model.layers.size();
  long long sum_nc = 0;
  for (const auto* u : ordered) {
    if (u->client_id < 0 ||
        u->client_id >= static_cast<int>(server.client_sizes.size())) {
      fail("aggregate: unknown client id");
    }
    if (u->n_c < 1) fail("aggregate: update with n_c < 1");
    if (u->mask.size() != L || u->values.size() != L || u->bias.size() != L) {
      fail("aggregate: update layer count mismatch");
    }
    sum_nc += u->n_c;
  }
  const long long n_rest = server.total_n - sum_nc;
  if (n_rest < 0) fail("aggregate: sampled client sizes exceed the population total");

  MaskedModel result = server.model;  // spec + bias containers reused

  // scratch: dense per-client values for the current layer
  std::vector<std::vector<double>> dense(ordered.size());

  for (std::size_t l = 0; l < L; ++l) {
    const auto& gl = server.model.layers[l];
    const std::size_t W = gl.weights.size();
    for (std::size_t c = 0; c < ordered.size(); ++c) {
      const auto* u = ordered[c];
      if (u->mask[l].size() != W) fail("aggregate: update mask shape mismatch");
      auto& buf = dense[c];
      buf.assign(W, 0.0);
      std::size_t cursor = 0;
      const auto& vals = u->values[l];
      for (std::size_t i = 0; i < W; ++i) {
        if (u->mask[l][i]) {
          if (cursor >= vals.size()) fail("aggregate: update value count mismatch");
          buf[i] = vals[cursor++];
        }
      }
      if (cursor != vals.size()) fail("aggregate: update value count mismatch");
    }

    auto& rl = result.layers[l];
    for (std::size_t i = 0; i < W; ++i) {
      // Eq. 5 in delta form around theta_eff = theta_r (x) m_r; the
      // non-participant term cancels, so identical updates leave the
      // parameter bitwise unchanged.
      const double theta_eff = gl.weights[i];
      double den = gl.mask[i] ? static_cast<double>(n_rest) : 0.0;
      double corr = 0.0;
      for (std::size_t c = 0; c < ordered.size(); ++c) {
        if (ordered[c]->mask[l][i]) {
          const double w_c = static_cast<double>(ordered[c]->n_c);
          den += w_c;
          corr += w_c * (dense[c][i] - theta_eff);
        }
      }
      if (den > 0.0) {
        rl.weights[i] = theta_eff + corr / den;
        rl.mask[i] = 1;
      } else {
        rl.weights[i] = 0.0;
        rl.mask[i] = 0;
      }
    }

    // biases: dense weighted average with the non-participant term
    const auto& gb = gl.bias;
    auto& rb = rl.bias;
    for (std::size_t i = 0; i < gb.size(); ++i) {
      double corr = 0.0;
      for (std::size_t c = 0; c < ordered.size(); ++c) {
        corr += static_cast<double>(ordered[c]->n_c) * (ordered[c]->bias[l][i] - gb[i]);
      }
      rb[i] = gb[i] + corr / static_cast<double>(server.total_n);
    }
  }

  // extra global pruning back to the plan's zero count
  std::size_t active = 0;
  for (const auto& rl : result.layers) {
    for (auto m : rl.mask) active += m;
  }
  const std::size_t total_w = result.weight_count();
  const std::size_t target_active = total_w - std::min(total_w, server.target_zeros);
  if (active > target_active) {
    std::size_t k_tilde = active - target_active;
    struct Entry {
      double mag;
      std::uint32_t layer;
      std::uint32_t idx;
    };
    std::vector<Entry> pool;
    pool.reserve(active);
    for (std::size_t l = 0; l < result.layers.size(); ++l) {
      const auto& rl = result.layers[l];
      for (std::size_t i = 0; i < rl.weights.size(); ++i) {
        if (rl.mask[i]) {
          pool.push_back({std::abs(rl.weights[i]), static_cast<std::uint32_t>(l),
                          static_cast<std::uint32_t>(i)});
        }
      }
    }
    std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k_tilde - 1),
                     pool.end(), [](const Entry& a, const Entry& b) {
                       if (a.mag != b.mag) return a.mag < b.mag;
                       if (a.layer != b.layer) return a.layer < b.layer;
                       return a.idx < b.idx;
                     });
    for (std::size_t j = 0; j < k_tilde; ++j) {
      auto& rl = result.layers[pool[j].layer];
      rl.weights[pool[j].idx] = 0.0;
      rl.mask[pool[j].idx] = 0;
    }
  }
  return result;
}

RoundStats advance_round(ServerState& server, const std::vector<ClientUpdate>& updates) {
  MaskedModel next = aggregate(updates, server);
  RoundStats stats;
  server.dmap = direction_map(next, server.model);
  server.model = std::move(next);
  server.round += 1;
  stats.global_sparsity = server.model.sparsity();
  return stats;
}

}  // namespace fedsgc
