#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>

#include "fedsgc/experiment.hpp"

namespace py = pybind11;
using namespace fedsgc;

namespace {

std::vector<LayerSpec> mlp_layers(const std::vector<int>& dims) {
  return mlp_spec(dims).layers;
}

py::array_t<float> features_array(const Dataset& ds) {
  py::array_t<float> arr({ds.num_samples, ds.dim});
  auto buf = arr.mutable_unchecked<2>();
  for (int i = 0; i < ds.num_samples; ++i) {
    const float* row = ds.row(i);
    for (int j = 0; j < ds.dim; ++j) buf(i, j) = row[j];
  }
  return arr;
}

Dataset labels_only_dataset(const std::vector<int>& labels, int num_classes) {
  Dataset ds;
  ds.labels = labels;
  ds.num_samples = static_cast<int>(labels.size());
  ds.num_classes = num_classes;
  ds.dim = 1;
  ds.features.assign(static_cast<std::size_t>(ds.num_samples), 0.0f);
  return ds;
}

}  // namespace

PYBIND11_MODULE(_fedsgc, m) {
  m.doc() = "Federated dynamic sparse training simulator (FedSGC core bindings)";

  m.def("sigma_schedule", &sigma_schedule, py::arg("t_c"), py::arg("t_end_c"),
        py::arg("alpha"),
        "Cosine over-prune factor alpha/2*(1+cos(t*pi/T_end)) in [0, alpha]");

  m.def(
      "erk_allocate_mlp",
      [](const std::vector<int>& dims, double target_S) {
        return erk_allocate(mlp_layers(dims), target_S).per_layer;
      },
      py::arg("dims"), py::arg("target_S"),
      "Per-layer zero fractions for an MLP given as unit counts, e.g. [784,100,10]");

  m.def(
      "prune_select",
      [](std::vector<double> weights, std::vector<std::uint8_t> mask,
         std::vector<std::int8_t> direction, std::vector<double> pseudo_grad,
         double layer_sparsity, double sigma_c, double lambda) {
        auto r = prune_layer(weights, mask, direction, pseudo_grad, layer_sparsity,
                             sigma_c, lambda);
        return py::make_tuple(r.mask, r.pruned);
      },
      py::arg("weights"), py::arg("mask"), py::arg("direction"), py::arg("pseudo_grad"),
      py::arg("layer_sparsity"), py::arg("sigma_c"), py::arg("lambda_"),
      "Guided-then-magnitude pruning; returns (new_mask, pruned_indices)");

  m.def(
      "grow_select",
      [](std::vector<double> dense_grads, std::vector<std::uint8_t> mask,
         std::vector<std::int8_t> direction, std::vector<double> pseudo_grad,
         std::size_t grow_count, double lambda) {
        auto r = grow_layer(dense_grads, mask, direction, pseudo_grad, grow_count,
                            lambda);
        return py::make_tuple(r.mask, r.grown);
      },
      py::arg("dense_grads"), py::arg("mask"), py::arg("direction"),
      py::arg("pseudo_grad"), py::arg("grow_count"), py::arg("lambda_"),
      "Guided-then-gradient-magnitude growth; returns (new_mask, grown_indices)");

  m.def(
      "make_synthetic",
      [](int num_samples, int num_classes, int dim, std::uint64_t seed, double noise) {
        Dataset ds = make_synthetic(num_samples, num_classes, dim, seed, noise);
        return py::make_tuple(features_array(ds), ds.labels);
      },
      py::arg("num_samples"), py::arg("num_classes"), py::arg("dim"), py::arg("seed"),
      py::arg("noise") = 0.25, "Seeded Gaussian class clusters: (features, labels)");

  m.def(
      "partition_pathological",
      [](const std::vector<int>& labels, int num_classes, int num_clients,
         int shards_per_client, std::uint64_t seed) {
        return partition_pathological(labels_only_dataset(labels, num_classes),
                                      num_clients, shards_per_client, seed);
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("num_clients"),
      py::arg("shards_per_client"), py::arg("seed"),
      "Label-sorted shard partition; returns per-client index lists");

  m.def(
      "partition_dirichlet",
      [](const std::vector<int>& labels, int num_classes, int num_clients, double beta,
         std::uint64_t seed) {
        return partition_dirichlet(labels_only_dataset(labels, num_classes), num_clients,
                                   beta, seed);
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("num_clients"), py::arg("beta"),
      py::arg("seed"), "Per-class Dirichlet partition; returns per-client index lists");

  m.def("analytic_upload_bits", &analytic_upload_bits, py::arg("n_weights"), py::arg("S"));
  m.def("analytic_download_bits", &analytic_download_bits, py::arg("n_weights"),
        py::arg("S"), py::arg("delta_R"));

  m.def("presets", &preset_names, "Names accepted by run_preset");

  m.def(
      "run_preset",
      [](const std::string& preset, const std::string& out_dir, std::uint64_t seed,
         const std::map<std::string, std::string>& overrides) {
        ExperimentConfig cfg = make_preset(preset);
        cfg.seed = seed;
        for (const auto& [k, v] : overrides) set_key(cfg, k, v);
        cfg.validate();
        RunResult r = run_experiment(cfg, out_dir);
        py::dict d;
        d["final_accuracy"] = r.final_accuracy;
        d["best_accuracy"] = r.best_accuracy;
        d["rounds"] = static_cast<int>(r.rows.size()) - 1;
        d["metrics_csv"] = r.metrics_path;
        d["ledger_csv"] = r.ledger_path;
        d["model_bin"] = r.model_path;
        return d;
      },
      py::arg("preset"), py::arg("out_dir"), py::arg("seed") = 1,
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Run an experiment preset and return summary paths and accuracies");
}
