#include <sstream>

#include "doctest.h"
#include "fedsgc/wire.hpp"

using namespace fedsgc;

namespace {

MaskedModel random_model(std::uint64_t seed, double sparsity) {
  NetworkSpec spec = mlp_spec({7, 5, 3});
  Rng init = Rng::stream(seed, "init");
  MaskedModel m = MaskedModel::he_uniform_init(spec, init);
  Rng topo = Rng::stream(seed, "topology");
  for (auto& l : m.layers) {
    for (auto& bit : l.mask) bit = topo.uniform() < sparsity ? 0 : 1;
  }
  m.apply_mask();
  return m;
}

}  // namespace

TEST_CASE("encode: empty mask produces an empty values section") {
  MaskedModel m = random_model(1, 0.0);
  for (auto& l : m.layers) std::fill(l.mask.begin(), l.mask.end(), 0);
  m.apply_mask();
  Payload p = to_payload(m);
  for (const auto& pl : p.layers) CHECK(pl.values.empty());
  const std::size_t bits = payload_bits(p);
  // header + per-layer lengths + packed masks + biases only
  std::size_t expect = 8 * (4 + 4);
  for (const auto& pl : p.layers) {
    expect += 8 * 8 + 8 * ((pl.weight_len + 7) / 8) + 32 * pl.bias.size();
  }
  CHECK(bits == expect);
  CHECK(bits == 8 * encode(p).size());
}

TEST_CASE("round-trip: decode(encode(x)) preserves structure and f32 values") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (double sp : {0.0, 0.5, 1.0}) {
      MaskedModel m = random_model(seed, sp);
      DirectionMap d(m.layers.size());
      Rng r(seed + 10);
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        d[l].resize(m.layers[l].weights.size());
        for (auto& v : d[l]) {
          v = static_cast<std::int8_t>(static_cast<int>(r.uniform_index(3)) - 1);
        }
      }
      const bool with_dmap = seed % 2 == 1;
      Payload p = to_payload(m, with_dmap ? &d : nullptr);
      std::vector<std::uint8_t> bytes = encode(p);
      CHECK(bytes.size() * 8 == payload_bits(p));
      Payload q = decode(bytes);
      REQUIRE(q.layers.size() == p.layers.size());
      for (std::size_t l = 0; l < p.layers.size(); ++l) {
        CHECK(q.layers[l].weight_len == p.layers[l].weight_len);
        CHECK(q.layers[l].mask == p.layers[l].mask);
        REQUIRE(q.layers[l].values.size() == p.layers[l].values.size());
        for (std::size_t i = 0; i < p.layers[l].values.size(); ++i) {
          CHECK(q.layers[l].values[i] ==
                static_cast<double>(static_cast<float>(p.layers[l].values[i])));
        }
        for (std::size_t i = 0; i < p.layers[l].bias.size(); ++i) {
          CHECK(q.layers[l].bias[i] ==
                static_cast<double>(static_cast<float>(p.layers[l].bias[i])));
        }
      }
      CHECK(q.dmap.has_value() == with_dmap);
      if (with_dmap) CHECK(*q.dmap == d);
      // re-encoding the decoded payload is bitwise identical
      CHECK(encode(q) == bytes);
    }
  }
}

TEST_CASE("values section size: 1e6 weights at 20% density is 6.4e6 bits") {
  Payload p;
  PayloadLayer pl;
  pl.weight_len = 1000000;
  pl.mask.assign(1000000, 0);
  for (std::size_t i = 0; i < 200000; ++i) pl.mask[i * 5] = 1;
  pl.values.assign(200000, 0.25);
  pl.bias.assign(10, 0.0);
  p.layers.push_back(std::move(pl));
  const std::size_t bits = payload_bits(p);
  const std::size_t header = 8 * (4 + 4 + 8);
  const std::size_t mask_bits = 8 * ((1000000 + 7) / 8);
  const std::size_t bias_bits = 32 * 10;
  CHECK(bits - header - mask_bits - bias_bits == 6400000);
}

TEST_CASE("decode rejects corruption") {
  MaskedModel m = random_model(4, 0.5);
  std::vector<std::uint8_t> bytes = encode(to_payload(m));
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(decode(truncated), WireError);
  std::vector<std::uint8_t> trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode(trailing), WireError);
  std::vector<std::uint8_t> bad_flags = bytes;
  bad_flags[7] = 0x40;
  CHECK_THROWS_AS(decode(bad_flags), WireError);
}

TEST_CASE("analytic costs match the closed forms") {
  CHECK(analytic_upload_bits(1000000, 0.8) == doctest::Approx(6.4e6).epsilon(1e-12));
  CHECK(analytic_upload_bits(1000, 0.0) == doctest::Approx(32000.0).epsilon(1e-12));
  CHECK(analytic_download_bits(1000, 0.8, 20.0) ==
        doctest::Approx((32 * 0.2 + 0.1) * 1000).epsilon(1e-12));
  CHECK(analytic_download_bits(1000, 0.8, 1e12) ==
        doctest::Approx(analytic_upload_bits(1000, 0.8)).epsilon(1e-9));
}

TEST_CASE("flop_report: proportionality and a hand count") {
  NetworkSpec spec = mlp_spec({4, 3, 2});
  SparsityPlan dense_plan = erk_allocate(spec.layers, 0.0);
  FlopReport r0 = flop_report(spec, dense_plan);
  CHECK(r0.forward_dense == doctest::Approx(4 * 3 + 3 * 2));
  CHECK(r0.forward_sparse == r0.forward_dense);
  CHECK(r0.train_step_dense == doctest::Approx(3.0 * 18));

  SparsityPlan plan;
  plan.target_S = 0.8;
  plan.per_layer = {0.8, 0.8};
  plan.layer_sizes = {12, 6};
  FlopReport r = flop_report(spec, plan);
  CHECK(r.forward_sparse == doctest::Approx(0.2 * 18).epsilon(1e-12));
  CHECK(r.readjust_step == doctest::Approx(r.train_step_dense).epsilon(1e-12));

  NetworkSpec conv = conv2_spec(28, 28, 1, 10, 20, 50, 10);
  SparsityPlan cp = erk_allocate(conv.layers, 0.0);
  FlopReport rc = flop_report(conv, cp);
  // 24*24*10*25 + 8*8*20*10*25 + 320*50 + 50*10
  CHECK(rc.forward_dense ==
        doctest::Approx(24 * 24 * 10 * 25 + 8 * 8 * 20 * 10 * 25 + 320 * 50 + 500));
}

TEST_CASE("ledger keeps (round, client, direction) order and totals") {
  CommLedger ledger;
  ledger.add(0, 3, true, 100, 90);
  ledger.add(0, 1, false, 50, 40);
  ledger.add(1, 0, false, 10, 10);
  ledger.add(0, 1, true, 60, 55);
  CHECK(ledger.total_upload_bits() == 160);
  CHECK(ledger.total_download_bits() == 60);
  const auto& e = ledger.entries();
  REQUIRE(e.size() == 4);
  CHECK((e[0].round == 0 && e[0].client == 1 && !e[0].upload));
  CHECK((e[1].round == 0 && e[1].client == 1 && e[1].upload));
  CHECK((e[2].round == 0 && e[2].client == 3 && e[2].upload));
  CHECK((e[3].round == 1 && e[3].client == 0 && !e[3].upload));
}
