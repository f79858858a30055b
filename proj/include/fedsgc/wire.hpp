#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsgc/sparsity.hpp"
#include "fedsgc/tensor.hpp"

namespace fedsgc {

// In-memory form of one wire payload. Values are carried only at mask=1
// indices, in ascending flat order.
struct PayloadLayer {
  std::uint32_t weight_len = 0;
  std::vector<std::uint8_t> mask;  // unpacked, 0/1 per weight index
  std::vector<double> values;      // active values only
  std::vector<double> bias;
};

struct Payload {
  std::vector<PayloadLayer> layers;
  std::optional<DirectionMap> dmap;
};

Payload to_payload(const MaskedModel& model, const DirectionMap* dmap = nullptr);

// Binary wire format, all header integers u32 big-endian:
//   u32 layer_count, u32 flags (bit0 = direction map present),
//   per layer: u32 weight_len, u32 bias_len;
// then section-ordered data, each section concatenating layers in order:
//   masks bit-packed 8 indices/byte (LSB first), zero-padded per layer;
//   values as 32-bit little-endian floats at mask=1 indices ascending;
//   biases as dense 32-bit little-endian floats;
//   optional direction map at 2 bits/index (00=0, 01=+1, 10=-1), 4
//   indices/byte (LSB first), zero-padded per layer.
std::vector<std::uint8_t> encode(const Payload& payload);
Payload decode(std::span<const std::uint8_t> bytes);

struct WireError : std::runtime_error {
  explicit WireError(const std::string& msg) : std::runtime_error(msg) {}
};

std::size_t payload_bits(const Payload& payload);  // == 8 * encode().size()

// Steady-state upload cost per round: 32*(1-S)*n bits.
double analytic_upload_bits(std::size_t n_weights, double S);
// Average download cost per round: (32*(1-S) + 2/delta_R)*n bits.
double analytic_download_bits(std::size_t n_weights, double S, double delta_R);

// Analytic multiply-accumulate counts per sample. Sparse counts scale each
// layer by its density (masks run over dense storage; savings are reported,
// not physically realized). A dense-gradient re-adjust pass costs the full
// dense training step.
struct FlopReport {
  std::vector<double> layer_forward_dense;
  std::vector<double> layer_forward_sparse;
  double forward_dense = 0.0;
  double forward_sparse = 0.0;
  double train_step_dense = 0.0;   // forward + backward
  double train_step_sparse = 0.0;
  double readjust_step = 0.0;      // always dense
};

FlopReport flop_report(const NetworkSpec& spec, const SparsityPlan& plan);

struct LedgerEntry {
  int round = 0;
  int client = 0;
  bool upload = false;  // false = download
  std::uint64_t measured_bits = 0;
  std::uint64_t analytic_bits = 0;
};

// Per-round, per-client communication accounting. Entries are kept ordered
// by (round, client, direction) with downloads before uploads.
class CommLedger {
 public:
  void add(int round, int client, bool upload, std::uint64_t measured_bits,
           std::uint64_t analytic_bits);
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::uint64_t total_upload_bits() const { return up_bits_; }
  std::uint64_t total_download_bits() const { return down_bits_; }
  // CSV schema: round,client,direction,measured_bits,analytic_bits
  void write_csv(const std::string& path) const;

 private:
  std::vector<LedgerEntry> entries_;
  std::uint64_t up_bits_ = 0;
  std::uint64_t down_bits_ = 0;
};

}  // namespace fedsgc
