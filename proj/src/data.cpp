#include "fedsgc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fedsgc {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803u;
constexpr std::uint32_t kLabelsMagic = 0x00000801u;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IdxError(IdxError::Kind::truncated, path + ": truncated header");
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path);
  return in;
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = open_binary(images_path);
  const std::uint32_t img_magic = read_u32_be(img, images_path);
  if (img_magic != kImagesMagic) {
    std::ostringstream os;
    os << images_path << ": bad images magic 0x" << std::hex << img_magic;
    throw IdxError(IdxError::Kind::bad_magic, os.str());
  }
  const std::uint32_t n = read_u32_be(img, images_path);
  const std::uint32_t rows = read_u32_be(img, images_path);
  const std::uint32_t cols = read_u32_be(img, images_path);

  auto lab = open_binary(labels_path);
  const std::uint32_t lab_magic = read_u32_be(lab, labels_path);
  if (lab_magic != kLabelsMagic) {
    std::ostringstream os;
    os << labels_path << ": bad labels magic 0x" << std::hex << lab_magic;
    throw IdxError(IdxError::Kind::bad_magic, os.str());
  }
  const std::uint32_t n_lab = read_u32_be(lab, labels_path);
  if (n != n_lab) {
    std::ostringstream os;
    os << "image count " << n << " != label count " << n_lab;
    throw IdxError(IdxError::Kind::count_mismatch, os.str());
  }

  Dataset ds;
  ds.num_samples = static_cast<int>(n);
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.channels = 1;
  ds.dim = ds.height * ds.width;
  ds.num_classes = 10;
  ds.feature_scale = 1.0 / 255.0;
  ds.features.resize(static_cast<std::size_t>(ds.num_samples) * ds.dim);
  ds.labels.resize(static_cast<std::size_t>(ds.num_samples));

  std::vector<unsigned char> pix(static_cast<std::size_t>(ds.dim));
  for (int i = 0; i < ds.num_samples; ++i) {
    if (!img.read(reinterpret_cast<char*>(pix.data()), ds.dim)) {
      throw IdxError(IdxError::Kind::truncated, images_path + ": truncated pixel data");
    }
    float* row = ds.features.data() + static_cast<std::size_t>(i) * ds.dim;
    for (int j = 0; j < ds.dim; ++j) row[j] = static_cast<float>(pix[j]) / 255.0f;
    unsigned char y;
    if (!lab.read(reinterpret_cast<char*>(&y), 1)) {
      throw IdxError(IdxError::Kind::truncated, labels_path + ": truncated label data");
    }
    if (y > 9) {
      throw IdxError(IdxError::Kind::count_mismatch,
                     labels_path + ": label out of range");
    }
    ds.labels[static_cast<std::size_t>(i)] = y;
  }
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IdxError(IdxError::Kind::io, "cannot create IDX files");
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(ds.num_samples));
  write_u32_be(img, static_cast<std::uint32_t>(ds.height));
  write_u32_be(img, static_cast<std::uint32_t>(ds.width));
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(ds.num_samples));
  std::vector<unsigned char> pix(static_cast<std::size_t>(ds.dim));
  for (int i = 0; i < ds.num_samples; ++i) {
    const float* row = ds.row(i);
    for (int j = 0; j < ds.dim; ++j) {
      const float v = std::clamp(row[j], 0.0f, 1.0f);
      pix[static_cast<std::size_t>(j)] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    img.write(reinterpret_cast<const char*>(pix.data()), ds.dim);
    const unsigned char y = static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(i)]);
    lab.write(reinterpret_cast<const char*>(&y), 1);
  }
}

Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths) {
  constexpr int kRecord = 3073;  // 1 label byte + 32*32*3 channel-major pixels
  Dataset ds;
  ds.height = 32;
  ds.width = 32;
  ds.channels = 3;
  ds.dim = 3072;
  ds.num_classes = 10;
  ds.feature_scale = 1.0 / 255.0;
  std::vector<unsigned char> rec(kRecord);
  for (const auto& path : batch_paths) {
    auto in = open_binary(path);
    while (in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
      if (rec[0] > 9) {
        throw IdxError(IdxError::Kind::count_mismatch, path + ": label out of range");
      }
      ds.labels.push_back(rec[0]);
      const std::size_t base = ds.features.size();
      ds.features.resize(base + 3072);
      for (int j = 0; j < 3072; ++j) {
        ds.features[base + j] = static_cast<float>(rec[1 + j]) / 255.0f;
      }
    }
    if (in.gcount() != 0) {
      throw IdxError(IdxError::Kind::truncated, path + ": partial record");
    }
  }
  ds.num_samples = static_cast<int>(ds.labels.size());
  if (ds.num_samples == 0) {
    throw IdxError(IdxError::Kind::truncated, "no CIFAR-10 records loaded");
  }
  return ds;
}

Dataset make_synthetic(int num_samples, int num_classes, int dim, std::uint64_t seed,
                       double noise) {
  if (num_classes < 2) throw std::invalid_argument("make_synthetic: num_classes < 2");
  if (num_samples < 1 || dim < 1) {
    throw std::invalid_argument("make_synthetic: num_samples and dim must be >= 1");
  }
  Rng means_rng = Rng::stream(seed, "synthetic-means");
  Rng noise_rng = Rng::stream(seed, "synthetic-noise");
  std::vector<double> means(static_cast<std::size_t>(num_classes) * dim);
  for (auto& m : means) m = 2.0 * means_rng.normal();

  Dataset ds;
  ds.num_samples = num_samples;
  ds.dim = dim;
  ds.num_classes = num_classes;
  ds.height = 1;
  ds.width = 1;
  ds.channels = dim;
  ds.features.resize(static_cast<std::size_t>(num_samples) * dim);
  ds.labels.resize(static_cast<std::size_t>(num_samples));
  for (int i = 0; i < num_samples; ++i) {
    const int y = i % num_classes;  // class frequencies within +-1 of n/K
    ds.labels[static_cast<std::size_t>(i)] = y;
    const double* mu = means.data() + static_cast<std::size_t>(y) * dim;
    float* row = ds.features.data() + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) {
      row[j] = static_cast<float>(mu[j] + noise * noise_rng.normal());
    }
  }
  return ds;
}

Dataset make_standin_images(int num_samples, std::uint64_t seed) {
  constexpr int kSide = 28;
  constexpr int kClasses = 10;
  // Class templates are part of the dataset definition and never vary with
  // the seed, so separately generated train/test sets share one geometry.
  Rng tmpl_rng = Rng::stream(0xF1C5u, "standin-templates");
  Rng samp_rng = Rng::stream(seed, "standin-samples");

  // One fixed intensity template per class: a few Gaussian bumps.
  std::vector<double> templates(static_cast<std::size_t>(kClasses) * kSide * kSide, 0.0);
  for (int c = 0; c < kClasses; ++c) {
    double* t = templates.data() + static_cast<std::size_t>(c) * kSide * kSide;
    for (int bump = 0; bump < 3; ++bump) {
      const double cy = tmpl_rng.uniform(4.0, 24.0);
      const double cx = tmpl_rng.uniform(4.0, 24.0);
      const double s = tmpl_rng.uniform(2.0, 4.0);
      for (int y = 0; y < kSide; ++y) {
        for (int x = 0; x < kSide; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          t[y * kSide + x] += std::exp(-d2 / (2.0 * s * s));
        }
      }
    }
    for (int i = 0; i < kSide * kSide; ++i) t[i] = std::min(1.0, t[i]);
  }

  Dataset ds;
  ds.num_samples = num_samples;
  ds.height = kSide;
  ds.width = kSide;
  ds.channels = 1;
  ds.dim = kSide * kSide;
  ds.num_classes = kClasses;
  ds.feature_scale = 1.0 / 255.0;
  ds.features.resize(static_cast<std::size_t>(num_samples) * ds.dim);
  ds.labels.resize(static_cast<std::size_t>(num_samples));

  std::vector<int> order(static_cast<std::size_t>(num_samples));
  for (int i = 0; i < num_samples; ++i) order[static_cast<std::size_t>(i)] = i % kClasses;
  samp_rng.shuffle(order);

  for (int i = 0; i < num_samples; ++i) {
    const int y = order[static_cast<std::size_t>(i)];
    ds.labels[static_cast<std::size_t>(i)] = y;
    const double* t = templates.data() + static_cast<std::size_t>(y) * ds.dim;
    const double gain = samp_rng.uniform(0.7, 1.0);
    float* row = ds.features.data() + static_cast<std::size_t>(i) * ds.dim;
    for (int j = 0; j < ds.dim; ++j) {
      const double v = gain * t[j] + 0.15 * samp_rng.normal();
      row[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ds;
}

bool ensure_standin_idx(const std::string& dir, int train_samples, int test_samples) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const fs::path files[4] = {root / "train-images-idx3-ubyte",
                             root / "train-labels-idx1-ubyte",
                             root / "t10k-images-idx3-ubyte",
                             root / "t10k-labels-idx1-ubyte"};
  bool all = true;
  for (const auto& f : files) all = all && fs::exists(f);
  if (all) return false;
  fs::create_directories(root);
  // Content is independent of experiment seeds so the fixture behaves like a
  // fixed on-disk dataset.
  Dataset train = make_standin_images(train_samples, 0x5eedu);
  Dataset test = make_standin_images(test_samples, 0x7e57u);
  write_idx(train, files[0].string(), files[1].string());
  write_idx(test, files[2].string(), files[3].string());
  return true;
}

Dataset subset_front(const Dataset& ds, int first_n) {
  if (first_n <= 0 || first_n > ds.num_samples) {
    throw std::invalid_argument("subset_front: size out of range");
  }
  Dataset out = ds;
  out.num_samples = first_n;
  out.features.resize(static_cast<std::size_t>(first_n) * ds.dim);
  out.labels.resize(static_cast<std::size_t>(first_n));
  return out;
}

Batch make_batch(const Dataset& ds, std::span<const int> rows) {
  Batch b;
  b.batch_size = static_cast<int>(rows.size());
  b.input_dim = ds.dim;
  b.inputs.resize(rows.size() * static_cast<std::size_t>(ds.dim));
  b.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* src = ds.row(rows[i]);
    double* dst = b.inputs.data() + i * static_cast<std::size_t>(ds.dim);
    for (int j = 0; j < ds.dim; ++j) dst[j] = src[j];
    b.labels[i] = ds.labels[static_cast<std::size_t>(rows[i])];
  }
  return b;
}

std::vector<std::vector<int>> partition_pathological(const Dataset& ds, int num_clients,
                                                     int shards_per_client,
                                                     std::uint64_t seed) {
  if (num_clients < 1 || shards_per_client < 1) {
    throw std::invalid_argument("partition_pathological: counts must be >= 1");
  }
  const int num_shards = num_clients * shards_per_client;
  const int shard_size = ds.num_samples / num_shards;
  if (shard_size == 0) {
    throw std::invalid_argument(
        "partition_pathological: dataset smaller than shard count");
  }
  const int used = num_shards * shard_size;  // truncate the remainder

  std::vector<int> idx(static_cast<std::size_t>(ds.num_samples));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const int la = ds.labels[static_cast<std::size_t>(a)];
    const int lb = ds.labels[static_cast<std::size_t>(b)];
    return la != lb ? la < lb : a < b;
  });
  idx.resize(static_cast<std::size_t>(used));

  std::vector<int> shard_ids(static_cast<std::size_t>(num_shards));
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  Rng rng = Rng::stream(seed, "partition-pathological");
  rng.shuffle(shard_ids);

  std::vector<std::vector<int>> clients(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) {
    auto& mine = clients[static_cast<std::size_t>(c)];
    mine.reserve(static_cast<std::size_t>(shards_per_client) * shard_size);
    for (int s = 0; s < shards_per_client; ++s) {
      const int shard = shard_ids[static_cast<std::size_t>(c * shards_per_client + s)];
      const auto begin = idx.begin() + static_cast<std::ptrdiff_t>(shard) * shard_size;
      mine.insert(mine.end(), begin, begin + shard_size);
    }
    std::sort(mine.begin(), mine.end());
  }
  return clients;
}

std::vector<std::vector<int>> partition_dirichlet(const Dataset& ds, int num_clients,
                                                  double beta, std::uint64_t seed) {
  if (num_clients < 1) throw std::invalid_argument("partition_dirichlet: num_clients < 1");
  if (!(beta > 0.0)) throw std::invalid_argument("partition_dirichlet: beta must be > 0");

  Rng rng = Rng::stream(seed, "partition-dirichlet");
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (int i = 0; i < ds.num_samples; ++i) {
    by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  }

  std::vector<std::vector<int>> clients(static_cast<std::size_t>(num_clients));
  for (auto& members : by_class) {
    if (members.empty()) continue;
    rng.shuffle(members);
    // proportions ~ Dirichlet(beta * 1_K)
    std::vector<double> p(static_cast<std::size_t>(num_clients));
    double sum = 0.0;
    for (auto& v : p) {
      v = rng.gamma(beta);
      sum += v;
    }
    if (sum <= 0.0) {
      p.assign(p.size(), 1.0);
      sum = static_cast<double>(num_clients);
    }
    for (auto& v : p) v /= sum;

    // largest-remainder rounding to an exact cover of this class
    const int n = static_cast<int>(members.size());
    std::vector<int> counts(static_cast<std::size_t>(num_clients));
    std::vector<std::pair<double, int>> rema(static_cast<std::size_t>(num_clients));
    int assigned = 0;
    for (int c = 0; c < num_clients; ++c) {
      const double want = p[static_cast<std::size_t>(c)] * n;
      counts[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(want));
      assigned += counts[static_cast<std::size_t>(c)];
      rema[static_cast<std::size_t>(c)] = {want - std::floor(want), c};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int r = 0; r < n - assigned; ++r) {
      counts[static_cast<std::size_t>(rema[static_cast<std::size_t>(r)].second)] += 1;
    }

    std::size_t cursor = 0;
    for (int c = 0; c < num_clients; ++c) {
      for (int k = 0; k < counts[static_cast<std::size_t>(c)]; ++k) {
        clients[static_cast<std::size_t>(c)].push_back(members[cursor++]);
      }
    }
  }

  int empty = 0;
  for (auto& mine : clients) {
    std::sort(mine.begin(), mine.end());
    empty += mine.empty();
  }
  if (empty > 0) {
    std::cerr << "partition_dirichlet: " << empty
              << " client(s) received no samples (beta=" << beta << ")\n";
  }
  return clients;
}

}  // namespace fedsgc
