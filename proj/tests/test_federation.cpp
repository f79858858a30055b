#include <cmath>
#include <set>

#include "doctest.h"
#include "fedsgc/federation.hpp"
#include "oracles.hpp"

using namespace fedsgc;

namespace {

// bare single-layer model for aggregation arithmetic tests
MaskedModel scalar_model(std::vector<double> w, std::vector<std::uint8_t> mask) {
  MaskedModel m;
  LayerSpec spec;
  spec.kind = LayerKind::dense;
  spec.fan_in = static_cast<int>(w.size());
  spec.fan_out = 1;
  spec.activation = Activation::softmax_output;
  m.spec.layers = {spec};
  m.spec.input_c = spec.fan_in;
  MaskedLayer l;
  l.weights = std::move(w);
  l.mask = std::move(mask);
  l.bias = {0.0};
  m.layers.push_back(std::move(l));
  return m;
}

ClientUpdate sparse_update(int id, long long n, std::vector<double> dense_vals,
                           std::vector<std::uint8_t> mask, double bias = 0.0) {
  ClientUpdate u;
  u.client_id = id;
  u.n_c = n;
  u.mask = {mask};
  u.bias = {{bias}};
  std::vector<double> vals;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) vals.push_back(dense_vals[i]);
  }
  u.values = {vals};
  return u;
}

ServerState toy_server(MaskedModel model, std::vector<long long> sizes,
                       std::size_t target_zeros = 0) {
  ServerState s;
  s.model = std::move(model);
  s.dmap = zero_direction(s.model);
  s.plan.target_S = 0.0;
  s.plan.per_layer = {0.0};
  s.plan.layer_sizes = {s.model.layers[0].weights.size()};
  s.client_sizes = std::move(sizes);
  s.total_n = 0;
  for (auto n : s.client_sizes) s.total_n += n;
  s.target_zeros = target_zeros;
  return s;
}

}  // namespace

TEST_CASE("sample_clients: full sample, determinism, empty-client exclusion") {
  std::vector<long long> sizes = {5, 5, 5, 5, 5};
  Rng a = Rng::stream(1, "sampling");
  CHECK(sample_clients(a, sizes, 5) == std::vector<int>{0, 1, 2, 3, 4});

  Rng b1 = Rng::stream(2, "sampling");
  Rng b2 = Rng::stream(2, "sampling");
  CHECK(sample_clients(b1, sizes, 3) == sample_clients(b2, sizes, 3));

  std::vector<long long> with_empty = {5, 0, 5, 5, 0, 5};
  Rng c = Rng::stream(3, "sampling");
  for (int draw = 0; draw < 50; ++draw) {
    for (int id : sample_clients(c, with_empty, 2)) {
      CHECK(with_empty[static_cast<std::size_t>(id)] > 0);
    }
  }
  Rng d = Rng::stream(4, "sampling");
  CHECK_THROWS_AS(sample_clients(d, with_empty, 5), std::invalid_argument);
}

TEST_CASE("sample_clients: inclusion frequency over 10k draws is count/N within 2%") {
  std::vector<long long> sizes(20, 10);
  Rng rng = Rng::stream(7, "sampling");
  std::vector<int> hits(20, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    for (int id : sample_clients(rng, sizes, 5)) hits[static_cast<std::size_t>(id)] += 1;
  }
  for (int h : hits) {
    CHECK(std::abs(static_cast<double>(h) / draws - 0.25) < 0.02);
  }
}

TEST_CASE("is_readjust_round: 1-indexed schedule, delta_R > R never fires") {
  CHECK_FALSE(is_readjust_round(1, 10, 60));
  CHECK(is_readjust_round(10, 10, 60));
  CHECK(is_readjust_round(50, 10, 60));
  CHECK_FALSE(is_readjust_round(60, 10, 60));  // r < R_end is strict
  for (int r = 1; r <= 20; ++r) CHECK_FALSE(is_readjust_round(r, 21, 20));
}

TEST_CASE("local_round: E=0 echoes the global pair; non-readjust keeps the mask") {
  Dataset ds = make_synthetic(60, 3, 4, 5, 0.4);
  NetworkSpec spec = mlp_spec({4, 6, 3});
  SparsityPlan plan = erk_allocate(spec.layers, 0.5);
  Rng init = Rng::stream(9, "init");
  Rng topo = Rng::stream(9, "topology");
  MaskedModel global = MaskedModel::he_uniform_init(spec, init);
  init_topology(global, plan, topo);
  DirectionMap dmap = zero_direction(global);

  std::vector<int> idx(60);
  for (int i = 0; i < 60; ++i) idx[static_cast<std::size_t>(i)] = i;
  ClientState cs(0, idx, Rng::stream(9, "client-batches", 0));

  LocalConfig cfg;
  cfg.epochs = 0;
  cfg.batch = 16;
  ClientUpdate u = local_round(cs, ds, global, dmap, plan, cfg);
  ClientUpdate expect = make_update(0, 60, global);
  CHECK(u.values == expect.values);
  CHECK(u.mask == expect.mask);
  CHECK(u.bias == expect.bias);
  CHECK(cs.e_c == 0);

  cfg.epochs = 2;
  cfg.lr = 0.1;
  cfg.readjust_round = false;
  ClientUpdate trained = local_round(cs, ds, global, dmap, plan, cfg);
  for (std::size_t l = 0; l < trained.mask.size(); ++l) {
    CHECK(trained.mask[l] == global.layers[l].mask);  // bit-for-bit
  }
  CHECK(cs.e_c == 2);
}

TEST_CASE("local_round: one epoch on a 2-parameter model matches a scalar oracle") {
  // dataset: 4 samples, 1 feature, 2 classes
  Dataset ds;
  ds.num_samples = 4;
  ds.dim = 1;
  ds.num_classes = 2;
  ds.features = {1.0f, 2.0f, -1.0f, -2.0f};
  ds.labels = {0, 0, 1, 1};

  NetworkSpec spec = mlp_spec({1, 2});
  MaskedModel global;
  global.spec = spec;
  MaskedLayer l;
  l.weights = {0.3, -0.2};
  l.mask = {1, 1};
  l.bias = {0.05, -0.05};
  global.layers = {l};
  SparsityPlan plan = erk_allocate(spec.layers, 0.0);
  DirectionMap dmap = zero_direction(global);

  std::vector<int> idx = {0, 1, 2, 3};
  ClientState cs(0, idx, Rng::stream(4, "client-batches", 0));
  LocalConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 4;  // single full batch per epoch
  cfg.lr = 0.5;

  ClientUpdate u = local_round(cs, ds, global, dmap, plan, cfg);

  // oracle: replicate the shuffle with an identical stream, then do the
  // softmax cross-entropy gradient for the 1x2 dense layer by hand
  Rng stream = Rng::stream(4, "client-batches", 0);
  std::vector<int> order = idx;
  stream.shuffle(order);
  double w0 = 0.3, w1 = -0.2, b0 = 0.05, b1 = -0.05;
  double gw0 = 0, gw1 = 0, gb0 = 0, gb1 = 0;
  for (int i : order) {
    const double x = ds.features[static_cast<std::size_t>(i)];
    const int y = ds.labels[static_cast<std::size_t>(i)];
    const double z0 = w0 * x + b0, z1 = w1 * x + b1;
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const double d0 = (p0 - (y == 0)) / 4.0, d1 = (p1 - (y == 1)) / 4.0;
    gw0 += d0 * x;
    gw1 += d1 * x;
    gb0 += d0;
    gb1 += d1;
  }
  w0 -= 0.5 * gw0;
  w1 -= 0.5 * gw1;
  b0 -= 0.5 * gb0;
  b1 -= 0.5 * gb1;

  CHECK(u.values[0][0] == doctest::Approx(w0).epsilon(1e-14));
  CHECK(u.values[0][1] == doctest::Approx(w1).epsilon(1e-14));
  CHECK(u.bias[0][0] == doctest::Approx(b0).epsilon(1e-14));
  CHECK(u.bias[0][1] == doctest::Approx(b1).epsilon(1e-14));
}

TEST_CASE("local_round: empty dataset is rejected") {
  Dataset ds = make_synthetic(10, 2, 2, 1);
  NetworkSpec spec = mlp_spec({2, 2});
  Rng init = Rng::stream(0, "init");
  MaskedModel global = MaskedModel::he_uniform_init(spec, init);
  SparsityPlan plan = erk_allocate(spec.layers, 0.0);
  DirectionMap dmap = zero_direction(global);
  ClientState cs(0, {}, Rng::stream(0, "client-batches", 0));
  LocalConfig cfg;
  CHECK_THROWS_AS(local_round(cs, ds, global, dmap, plan, cfg), std::invalid_argument);
}

TEST_CASE("aggregate: equal-weight full-mask average, and the n_rest example") {
  // two clients, equal n, full masks, n_rest = 0 -> plain average
  MaskedModel global = scalar_model({1.0, -1.0, 0.5}, {1, 1, 1});
  ServerState server = toy_server(global, {2, 2});
  std::vector<ClientUpdate> ups;
  ups.push_back(sparse_update(0, 2, {2.0, 4.0, 1.0}, {1, 1, 1}, 0.2));
  ups.push_back(sparse_update(1, 2, {4.0, 0.0, 2.0}, {1, 1, 1}, 0.6));
  MaskedModel out = aggregate(ups, server);
  CHECK(out.layers[0].weights[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(out.layers[0].weights[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out.layers[0].weights[2] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(out.layers[0].bias[0] == doctest::Approx(0.4).epsilon(1e-12));

  // single index: c1 active (n=1, theta=4), c2 masked out, global theta=1
  // with mask 1, total n=3 -> n_rest=1: (1*4 + 1*1)/(1+1) = 2.5
  MaskedModel g2 = scalar_model({1.0}, {1});
  ServerState s2 = toy_server(g2, {1, 1, 1});
  std::vector<ClientUpdate> ups2;
  ups2.push_back(sparse_update(0, 1, {4.0}, {1}));
  ups2.push_back(sparse_update(1, 1, {0.0}, {0}));
  MaskedModel out2 = aggregate(ups2, s2);
  CHECK(out2.layers[0].weights[0] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(out2.layers[0].mask[0] == 1);
}

TEST_CASE("aggregate: zero-denominator index is pruned globally") {
  // index 0 masked by both clients and by the global mask; index 1 masked by
  // everyone but kept dense in the global model with n_rest = 0
  MaskedModel global = scalar_model({0.0, 2.0}, {0, 1});
  ServerState server = toy_server(global, {1, 1});
  std::vector<ClientUpdate> ups;
  ups.push_back(sparse_update(0, 1, {0.0, 0.0}, {0, 0}));
  ups.push_back(sparse_update(1, 1, {0.0, 0.0}, {0, 0}));
  MaskedModel out = aggregate(ups, server);
  CHECK(out.layers[0].weights[0] == 0.0);
  CHECK(out.layers[0].mask[0] == 0);
  CHECK(out.layers[0].weights[1] == 0.0);  // n_rest=0, all clients masked: 0/0
  CHECK(out.layers[0].mask[1] == 0);
}

TEST_CASE("aggregate: interim mask is the OR when no extra pruning is needed") {
  MaskedModel global = scalar_model({1.0, 0.0, 0.0, 0.0}, {1, 0, 0, 0});
  ServerState server = toy_server(global, {1, 1, 2});
  std::vector<ClientUpdate> ups;
  ups.push_back(sparse_update(0, 1, {0.0, 3.0, 0.0, 0.0}, {0, 1, 0, 0}));
  ups.push_back(sparse_update(1, 1, {0.0, 0.0, 5.0, 0.0}, {0, 0, 1, 0}));
  MaskedModel out = aggregate(ups, server);
  CHECK(out.layers[0].mask == std::vector<std::uint8_t>{1, 1, 1, 0});
}

TEST_CASE("aggregate: extra global prune restores the plan zero count") {
  MaskedModel global = scalar_model({1.0, 0.0, 0.0, -0.4}, {1, 0, 0, 1});
  ServerState server = toy_server(global, {1, 1, 2}, /*target_zeros=*/2);
  std::vector<ClientUpdate> ups;
  ups.push_back(sparse_update(0, 1, {0.0, 3.0, 0.0, 0.0}, {0, 1, 0, 1}));
  ups.push_back(sparse_update(1, 1, {0.0, 0.0, 0.1, 0.0}, {0, 0, 1, 1}));
  MaskedModel out = aggregate(ups, server);
  std::size_t zeros = 0;
  for (auto m : out.layers[0].mask) zeros += (m == 0);
  CHECK(zeros == 2);
  // the two smallest |theta| of the interim active set were removed
  CHECK(out.layers[0].mask[0] == 1);
  CHECK(out.layers[0].mask[1] == 1);
  CHECK(out.layers[0].weights[2] == 0.0);
  CHECK(out.layers[0].weights[3] == 0.0);
}

TEST_CASE("aggregate matches a direct Eq-5 evaluation on random sparse updates") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t W = 6 + rng.uniform_index(10);
    std::vector<double> gw(W);
    std::vector<std::uint8_t> gm(W);
    for (std::size_t i = 0; i < W; ++i) {
      gm[i] = rng.uniform() < 0.3 ? 0 : 1;
      gw[i] = gm[i] ? rng.uniform(-1.0, 1.0) : 0.0;
    }
    MaskedModel global = scalar_model(gw, gm);
    std::vector<long long> sizes = {2, 3, 4, 6};
    ServerState server = toy_server(global, sizes);
    std::vector<ClientUpdate> ups;
    std::vector<std::vector<double>> dense;
    std::vector<std::vector<std::uint8_t>> masks;
    for (int c = 0; c < 3; ++c) {
      std::vector<double> w(W);
      std::vector<std::uint8_t> m(W);
      for (std::size_t i = 0; i < W; ++i) {
        m[i] = rng.uniform() < 0.4 ? 0 : 1;
        w[i] = m[i] ? rng.uniform(-2.0, 2.0) : 0.0;
      }
      ups.push_back(sparse_update(c, sizes[static_cast<std::size_t>(c)], w, m,
                                  rng.uniform(-1.0, 1.0)));
      dense.push_back(w);
      masks.push_back(m);
    }
    MaskedModel out = aggregate(ups, server);

    const double n_rest = 6.0;  // 15 total - 9 sampled
    for (std::size_t i = 0; i < W; ++i) {
      double num = 0.0, den = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double nc = static_cast<double>(sizes[static_cast<std::size_t>(c)]);
        num += nc * dense[static_cast<std::size_t>(c)][i] *
               masks[static_cast<std::size_t>(c)][i];
        den += nc * masks[static_cast<std::size_t>(c)][i];
      }
      num += n_rest * gw[i] * gm[i];
      den += n_rest * gm[i];
      if (den > 0.0) {
        CHECK(out.layers[0].weights[i] == doctest::Approx(num / den).epsilon(1e-12));
        CHECK(out.layers[0].mask[i] == 1);
      } else {
        CHECK(out.layers[0].weights[i] == 0.0);
        CHECK(out.layers[0].mask[i] == 0);
      }
    }
  }
}

TEST_CASE("non-participant conservation: zero drift keeps theta bitwise") {
  Dataset ds = make_synthetic(80, 4, 5, 6, 0.4);
  NetworkSpec spec = mlp_spec({5, 7, 4});
  SparsityPlan plan = erk_allocate(spec.layers, 0.5);
  Rng init = Rng::stream(3, "init");
  Rng topo = Rng::stream(3, "topology");
  std::vector<long long> sizes = {40, 40};
  ServerState server = ServerState::init(spec, plan, sizes, init, topo);
  const MaskedModel before = server.model;

  std::vector<int> idx(40);
  for (int i = 0; i < 40; ++i) idx[static_cast<std::size_t>(i)] = i;
  LocalConfig cfg;
  cfg.epochs = 0;
  std::vector<ClientUpdate> ups;
  for (int c = 0; c < 2; ++c) {
    ClientState cs(c, idx, Rng::stream(3, "client-batches", static_cast<std::uint64_t>(c)));
    ups.push_back(local_round(cs, ds, server.model, server.dmap, plan, cfg));
  }
  advance_round(server, ups);
  for (std::size_t l = 0; l < before.layers.size(); ++l) {
    CHECK(server.model.layers[l].weights == before.layers[l].weights);
    CHECK(server.model.layers[l].mask == before.layers[l].mask);
    CHECK(server.model.layers[l].bias == before.layers[l].bias);
  }
  for (const auto& d : server.dmap) {
    for (auto v : d) CHECK(v == 0);
  }
  CHECK(server.round == 1);
}

TEST_CASE("advance_round: direction map sign consistency and sparsity hold") {
  Dataset ds = make_synthetic(120, 3, 6, 8, 0.4);
  NetworkSpec spec = mlp_spec({6, 8, 3});
  SparsityPlan plan = erk_allocate(spec.layers, 0.7);
  Rng init = Rng::stream(5, "init");
  Rng topo = Rng::stream(5, "topology");
  std::vector<long long> sizes = {60, 60};
  ServerState server = ServerState::init(spec, plan, sizes, init, topo);

  std::vector<int> idx(60);
  LocalConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 20;
  cfg.lr = 0.1;
  for (int round = 0; round < 3; ++round) {
    const MaskedModel before = server.model;
    std::vector<ClientUpdate> ups;
    for (int c = 0; c < 2; ++c) {
      for (int i = 0; i < 60; ++i) idx[static_cast<std::size_t>(i)] = 60 * c + i;
      ClientState cs(c, idx, Rng::stream(100 + round, "client-batches",
                                         static_cast<std::uint64_t>(c)));
      ups.push_back(local_round(cs, ds, server.model, server.dmap, plan, cfg));
    }
    RoundStats stats = advance_round(server, ups);
    const double tol = static_cast<double>(server.model.layers.size()) /
                       static_cast<double>(server.model.weight_count());
    CHECK(std::abs(stats.global_sparsity - 0.7) <= tol);
    for (std::size_t l = 0; l < server.dmap.size(); ++l) {
      for (std::size_t i = 0; i < server.dmap[l].size(); ++i) {
        const double diff =
            server.model.layers[l].weights[i] - before.layers[l].weights[i];
        if (server.dmap[l][i] == 1) CHECK(diff > 0.0);
        if (server.dmap[l][i] == -1) CHECK(diff < 0.0);
        if (server.dmap[l][i] == 0) CHECK(diff == 0.0);
      }
    }
  }
}

TEST_CASE("single client with full participation equals centralized training") {
  Dataset ds = make_synthetic(100, 4, 6, 44, 0.3);
  NetworkSpec spec = mlp_spec({6, 8, 4});
  SparsityPlan plan = erk_allocate(spec.layers, 0.0);
  Rng init = Rng::stream(2, "init");
  Rng topo = Rng::stream(2, "topology");
  ServerState server = ServerState::init(spec, plan, {100}, init, topo);

  // centralized reference: same model trained directly, batching replicated
  MaskedModel central = server.model;
  Rng central_stream = Rng::stream(2, "client-batches", 0);
  std::vector<int> all(100);
  for (int i = 0; i < 100; ++i) all[static_cast<std::size_t>(i)] = i;

  std::vector<int> idx = all;
  ClientState cs(0, idx, Rng::stream(2, "client-batches", 0));
  LocalConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 25;
  cfg.lr = 0.05;
  for (int round = 0; round < 3; ++round) {
    std::vector<ClientUpdate> ups;
    ups.push_back(local_round(cs, ds, server.model, server.dmap, server.plan, cfg));
    advance_round(server, ups);

    OptimizerState opt = OptimizerState::make_sgd(cfg.lr);
    std::vector<int> order = all;
    for (int e = 0; e < cfg.epochs; ++e) {
      central_stream.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += 25) {
        Batch b = make_batch(ds, std::span<const int>(order).subspan(start, 25));
        ForwardResult fr = forward(central, b);
        Gradients g = backward(central, fr.cache);
        sgd_step(central, g, opt);
      }
    }
  }
  for (std::size_t l = 0; l < central.layers.size(); ++l) {
    for (std::size_t i = 0; i < central.layers[l].weights.size(); ++i) {
      CHECK(server.model.layers[l].weights[i] ==
            doctest::Approx(central.layers[l].weights[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("client scheduling order does not change the aggregate") {
  Dataset ds = make_synthetic(90, 3, 5, 12, 0.4);
  NetworkSpec spec = mlp_spec({5, 6, 3});
  SparsityPlan plan = erk_allocate(spec.layers, 0.6);
  Rng init = Rng::stream(6, "init");
  Rng topo = Rng::stream(6, "topology");
  std::vector<long long> sizes = {30, 30, 30};
  ServerState server = ServerState::init(spec, plan, sizes, init, topo);

  auto run_order = [&](std::vector<int> order) {
    std::vector<ClientUpdate> ups(3);
    LocalConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 10;
    cfg.lr = 0.05;
    for (int c : order) {
      std::vector<int> idx(30);
      for (int i = 0; i < 30; ++i) idx[static_cast<std::size_t>(i)] = 30 * c + i;
      ClientState cs(c, idx, Rng::stream(6, "client-batches",
                                         static_cast<std::uint64_t>(c)));
      ups[static_cast<std::size_t>(c)] =
          local_round(cs, ds, server.model, server.dmap, plan, cfg);
    }
    return aggregate(ups, server);
  };
  MaskedModel fwd = run_order({0, 1, 2});
  MaskedModel rev = run_order({2, 1, 0});
  for (std::size_t l = 0; l < fwd.layers.size(); ++l) {
    CHECK(fwd.layers[l].weights == rev.layers[l].weights);
    CHECK(fwd.layers[l].mask == rev.layers[l].mask);
  }
}
