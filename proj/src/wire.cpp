#include "fedsgc/wire.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

namespace fedsgc {

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_f32_le(std::vector<std::uint8_t>& out, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  out.push_back(static_cast<std::uint8_t>(bits));
  out.push_back(static_cast<std::uint8_t>(bits >> 8));
  out.push_back(static_cast<std::uint8_t>(bits >> 16));
  out.push_back(static_cast<std::uint8_t>(bits >> 24));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32_be() {
    need(4);
    const std::uint32_t v = (std::uint32_t(bytes_[pos_]) << 24) |
                            (std::uint32_t(bytes_[pos_ + 1]) << 16) |
                            (std::uint32_t(bytes_[pos_ + 2]) << 8) |
                            std::uint32_t(bytes_[pos_ + 3]);
    pos_ += 4;
    return v;
  }

  double f32_le() {
    need(4);
    const std::uint32_t bits = std::uint32_t(bytes_[pos_]) |
                               (std::uint32_t(bytes_[pos_ + 1]) << 8) |
                               (std::uint32_t(bytes_[pos_ + 2]) << 16) |
                               (std::uint32_t(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return static_cast<double>(std::bit_cast<float>(bits));
  }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw WireError("payload truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kFlagDmap = 1u;

}  // namespace

Payload to_payload(const MaskedModel& model, const DirectionMap* dmap) {
  Payload p;
  p.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& ml = model.layers[l];
    auto& pl = p.layers[l];
    pl.weight_len = static_cast<std::uint32_t>(ml.weights.size());
    pl.mask = ml.mask;
    pl.bias = ml.bias;
    for (std::size_t i = 0; i < ml.weights.size(); ++i) {
      if (ml.mask[i]) pl.values.push_back(ml.weights[i]);
    }
  }
  if (dmap) {
    if (dmap->size() != model.layers.size()) {
      throw WireError("to_payload: direction map layer count mismatch");
    }
    p.dmap = *dmap;
  }
  return p;
}

std::vector<std::uint8_t> encode(const Payload& payload) {
  std::vector<std::uint8_t> out;
  put_u32_be(out, static_cast<std::uint32_t>(payload.layers.size()));
  put_u32_be(out, payload.dmap ? kFlagDmap : 0u);
  for (const auto& pl : payload.layers) {
    put_u32_be(out, pl.weight_len);
    put_u32_be(out, static_cast<std::uint32_t>(pl.bias.size()));
  }
  // masks, bit-packed LSB-first, zero-padded per layer
  for (const auto& pl : payload.layers) {
    const std::size_t nbytes = (pl.weight_len + 7) / 8;
    const std::size_t base = out.size();
    out.resize(base + nbytes, 0);
    for (std::size_t i = 0; i < pl.mask.size(); ++i) {
      if (pl.mask[i]) out[base + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
  }
  // active values
  for (const auto& pl : payload.layers) {
    for (double v : pl.values) put_f32_le(out, v);
  }
  // biases
  for (const auto& pl : payload.layers) {
    for (double v : pl.bias) put_f32_le(out, v);
  }
  // optional direction map, 2 bits per index: 00=0, 01=+1, 10=-1
  if (payload.dmap) {
    for (std::size_t l = 0; l < payload.dmap->size(); ++l) {
      const auto& d = (*payload.dmap)[l];
      const std::size_t nbytes = (d.size() + 3) / 4;
      const std::size_t base = out.size();
      out.resize(base + nbytes, 0);
      for (std::size_t i = 0; i < d.size(); ++i) {
        std::uint8_t code = 0;
        if (d[i] > 0) code = 1;
        if (d[i] < 0) code = 2;
        out[base + i / 4] |= static_cast<std::uint8_t>(code << (2 * (i % 4)));
      }
    }
  }
  return out;
}

Payload decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint32_t layer_count = r.u32_be();
  if (layer_count == 0 || layer_count > (1u << 20)) {
    throw WireError("corrupt header: implausible layer count");
  }
  const std::uint32_t flags = r.u32_be();
  if ((flags & ~kFlagDmap) != 0) throw WireError("corrupt header: unknown flags");

  Payload p;
  p.layers.resize(layer_count);
  for (auto& pl : p.layers) {
    pl.weight_len = r.u32_be();
    pl.bias.resize(r.u32_be());
  }
  for (auto& pl : p.layers) {
    const std::size_t nbytes = (pl.weight_len + 7) / 8;
    auto raw = r.raw(nbytes);
    pl.mask.resize(pl.weight_len);
    for (std::size_t i = 0; i < pl.mask.size(); ++i) {
      pl.mask[i] = (raw[i / 8] >> (i % 8)) & 1u;
    }
  }
  for (auto& pl : p.layers) {
    std::size_t pop = 0;
    for (auto m : pl.mask) pop += m;
    pl.values.resize(pop);
    for (auto& v : pl.values) v = r.f32_le();
  }
  for (auto& pl : p.layers) {
    for (auto& v : pl.bias) v = r.f32_le();
  }
  if (flags & kFlagDmap) {
    DirectionMap d(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
      const std::size_t W = p.layers[l].weight_len;
      auto raw = r.raw((W + 3) / 4);
      d[l].resize(W);
      for (std::size_t i = 0; i < W; ++i) {
        const std::uint8_t code = (raw[i / 4] >> (2 * (i % 4))) & 3u;
        if (code == 3) throw WireError("corrupt direction map code");
        d[l][i] = code == 0 ? 0 : (code == 1 ? 1 : -1);
      }
    }
    p.dmap = std::move(d);
  }
  if (r.remaining() != 0) throw WireError("payload length mismatch: trailing bytes");
  return p;
}

std::size_t payload_bits(const Payload& payload) {
  std::size_t bytes = 8;  // layer count + flags
  for (const auto& pl : payload.layers) {
    bytes += 8;  // weight_len + bias_len
    bytes += (pl.weight_len + 7) / 8;
    bytes += 4 * pl.values.size();
    bytes += 4 * pl.bias.size();
  }
  if (payload.dmap) {
    for (const auto& d : *payload.dmap) bytes += (d.size() + 3) / 4;
  }
  return 8 * bytes;
}

double analytic_upload_bits(std::size_t n_weights, double S) {
  return 32.0 * (1.0 - S) * static_cast<double>(n_weights);
}

double analytic_download_bits(std::size_t n_weights, double S, double delta_R) {
  return (32.0 * (1.0 - S) + 2.0 / delta_R) * static_cast<double>(n_weights);
}

FlopReport flop_report(const NetworkSpec& spec, const SparsityPlan& plan) {
  spec.validate();
  if (plan.per_layer.size() != spec.layers.size()) {
    throw std::invalid_argument("flop_report: plan does not match spec");
  }
  FlopReport rep;
  int h = spec.input_h, w = spec.input_w;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& ls = spec.layers[l];
    double macs;
    if (ls.kind == LayerKind::dense) {
      macs = static_cast<double>(ls.fan_in) * ls.fan_out;
      h = 1;
      w = 1;
    } else {
      const int ch = h - ls.kernel_h + 1;
      const int cw = w - ls.kernel_w + 1;
      macs = static_cast<double>(ch) * cw * ls.fan_out * ls.fan_in * ls.kernel_h *
             ls.kernel_w;
      h = ch / 2;
      w = cw / 2;
    }
    const double density = 1.0 - plan.per_layer[l];
    rep.layer_forward_dense.push_back(macs);
    rep.layer_forward_sparse.push_back(macs * density);
    rep.forward_dense += macs;
    rep.forward_sparse += macs * density;
  }
  // backward roughly doubles the forward multiply-accumulate count
  rep.train_step_dense = 3.0 * rep.forward_dense;
  rep.train_step_sparse = 3.0 * rep.forward_sparse;
  rep.readjust_step = rep.train_step_dense;
  return rep;
}

void CommLedger::add(int round, int client, bool upload, std::uint64_t measured_bits,
                     std::uint64_t analytic_bits) {
  LedgerEntry e{round, client, upload, measured_bits, analytic_bits};
  auto key = [](const LedgerEntry& x) {
    return std::tuple<int, int, bool>(x.round, x.client, x.upload);
  };
  if (!entries_.empty() && key(e) < key(entries_.back())) {
    // keep the collector ordered by (round, client, direction)
    auto it = std::upper_bound(entries_.begin(), entries_.end(), e,
                               [&](const LedgerEntry& a, const LedgerEntry& b) {
                                 return key(a) < key(b);
                               });
    entries_.insert(it, e);
  } else {
    entries_.push_back(e);
  }
  if (upload) {
    up_bits_ += measured_bits;
  } else {
    down_bits_ += measured_bits;
  }
}

void CommLedger::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ledger csv: " + path);
  out << "round,client,direction,measured_bits,analytic_bits\n";
  for (const auto& e : entries_) {
    out << e.round << ',' << e.client << ',' << (e.upload ? "up" : "down") << ','
        << e.measured_bits << ',' << e.analytic_bits << '\n';
  }
}

}  // namespace fedsgc
