#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsgc/rng.hpp"
#include "fedsgc/tensor.hpp"

namespace fedsgc {

struct Dataset {
  std::vector<float> features;  // num_samples x dim, row-major, normalized
  std::vector<int> labels;
  int num_samples = 0;
  int dim = 0;
  int num_classes = 0;
  // image geometry when applicable (h*w*c == dim)
  int height = 1, width = 1, channels = 1;
  // normalization applied at load time (raw = value/scale - offset inverse)
  double feature_scale = 1.0;
  double feature_offset = 0.0;

  const float* row(int i) const {
    return features.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(dim);
  }
};

struct IdxError : std::runtime_error {
  enum class Kind { io, bad_magic, truncated, count_mismatch };
  Kind kind;
  IdxError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Big-endian IDX pair: images magic 0x00000803, labels magic 0x00000801.
// Pixels are scaled to [0,1].
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);
// Writes a dataset back out as an IDX pair (u8 pixels, features * 255).
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-major pixels.
Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths);

// Gaussian class clusters with seeded means; linearly separable at low noise.
Dataset make_synthetic(int num_samples, int num_classes, int dim,
                       std::uint64_t seed, double noise = 0.25);

// Deterministic 10-class image dataset in MNIST's shape (28x28 u8 grayscale):
// each class is a fixed multi-bump intensity template plus sampling noise.
// Serves as a drop-in fixture when the real IDX files are unavailable.
Dataset make_standin_images(int num_samples, std::uint64_t seed);

// Creates train/test IDX pairs under dir (canonical MNIST file names) if any
// of the four files is missing. Returns true when files were generated.
bool ensure_standin_idx(const std::string& dir, int train_samples = 60000,
                        int test_samples = 10000);

Dataset subset_front(const Dataset& ds, int first_n);

Batch make_batch(const Dataset& ds, std::span<const int> rows);

// Label-sorted contiguous shards dealt to clients by seeded shuffle. The
// dataset is truncated to the largest multiple of num_clients*shards_per_client.
std::vector<std::vector<int>> partition_pathological(const Dataset& ds,
                                                     int num_clients,
                                                     int shards_per_client,
                                                     std::uint64_t seed);

// Per class, client proportions ~ Dirichlet(beta * 1) with largest-remainder
// rounding; disjoint exact cover. Clients may end up empty at small beta.
std::vector<std::vector<int>> partition_dirichlet(const Dataset& ds,
                                                  int num_clients, double beta,
                                                  std::uint64_t seed);

}  // namespace fedsgc
