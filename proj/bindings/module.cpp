#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <iostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mars/checkpoint.hpp"
#include "mars/config.hpp"
#include "mars/dataset.hpp"
#include "mars/errors.hpp"
#include "mars/evaluation.hpp"
#include "mars/features.hpp"
#include "mars/graph.hpp"
#include "mars/model.hpp"
#include "mars/numerics.hpp"
#include "mars/rng.hpp"
#include "mars/training.hpp"

namespace py = pybind11;
using namespace mars;

namespace {

using FeatureMap = std::unordered_map<std::string, std::vector<double>>;

// (bundle, {"missing_image": n, "missing_text": n})
py::tuple build_features(const data::TransactionLog& log,
                         const data::InteractionMatrix& m,
                         const FeatureMap& image, const FeatureMap& text) {
  if (image.empty() || text.empty()) {
    throw DataError("features: image and text maps must be non-empty");
  }
  feat::BundleInputs inputs;
  inputs.image = &image;
  inputs.text = &text;
  inputs.image_dim = static_cast<int>(image.begin()->second.size());
  inputs.text_dim = static_cast<int>(text.begin()->second.size());
  feat::BundleBuildStats stats;
  auto bundle = feat::build_feature_bundle(log, m, inputs, &stats);
  feat::check_finite(bundle);
  py::dict d;
  d["missing_image"] = stats.missing_image;
  d["missing_text"] = stats.missing_text;
  return py::make_tuple(std::move(bundle), std::move(d));
}

// A model plus the settings it was built with; enough to score and save.
struct ModelHandle {
  training::TrainConfig cfg;
  model::Model mdl;
};

struct TrainResult : ModelHandle {
  ckpt::Checkpoint best;
  std::vector<training::EpochStats> trace;
  int best_epoch = 0;
  double best_metric = 0.0;
};

TrainResult train_py(const data::InteractionMatrix& m,
                     const data::SplitAssignment& split,
                     const feat::FeatureBundle& bundle,
                     const training::TrainConfig& cfg, bool verbose) {
  auto out =
      training::train(m, split, bundle, cfg, verbose ? &std::cout : nullptr);
  TrainResult r;
  r.cfg = cfg;
  r.mdl = std::move(out.model);
  r.best = std::move(out.best);
  r.trace = std::move(out.trace);
  r.best_epoch = out.best_epoch;
  r.best_metric = out.best_metric;
  return r;
}

ModelHandle load_model(const std::string& path,
                       const data::InteractionMatrix& m,
                       const feat::FeatureBundle& bundle) {
  const auto c = ckpt::load_checkpoint(path);
  ModelHandle h;
  h.cfg = training::TrainConfig::from(config::KeyValues::parse(c.config_text));
  const auto mcfg =
      model::config_for_bundle(bundle, h.cfg.d, h.cfg.hops, h.cfg.d_k);
  h.mdl = model::init_model(mcfg, static_cast<int>(m.users.size()),
                            static_cast<int>(m.items.size()), h.cfg.seed);
  ckpt::restore_parameters(c, h.mdl.named_parameters());
  return h;
}

data::Split parse_split(const std::string& name) {
  if (name == "train") return data::Split::train;
  if (name == "validation") return data::Split::validation;
  if (name == "test") return data::Split::test;
  throw DataError("unknown split '" + name + "'");
}

py::dict evaluate_py(const ModelHandle& h, const data::InteractionMatrix& m,
                     const data::SplitAssignment& split,
                     const feat::FeatureBundle& bundle,
                     const std::vector<int>& ks, int negatives,
                     const std::string& target) {
  const auto topo = graph::build_topology(m, split);
  num::NoGradGuard ng;
  const auto prop = model::propagate_all(h.mdl, topo, bundle);
  const auto cs = eval::build_candidates(
      m, split, parse_split(target),
      derive_seed(h.cfg.seed, target + "cand"), negatives);
  const auto rep = eval::evaluate_model(h.mdl, prop, topo, cs, ks);
  const auto pop = eval::evaluate_popularity(
      cs, data::item_train_counts(m, split), ks);
  py::dict d;
  d["k"] = rep.ks;
  d["recall"] = rep.mean_recall;
  d["ndcg"] = rep.mean_ndcg;
  d["pop_recall"] = pop.mean_recall;
  d["pop_ndcg"] = pop.mean_ndcg;
  d["users"] = rep.users.size();
  d["skipped_users"] = rep.skipped_users;
  d["dropped_positives"] = rep.dropped_positives;
  return d;
}

py::dict attention_py(const ModelHandle& h, const data::InteractionMatrix& m,
                      const data::SplitAssignment& split,
                      const feat::FeatureBundle& bundle) {
  const auto topo = graph::build_topology(m, split);
  num::NoGradGuard ng;
  const auto prop = model::propagate_all(h.mdl, topo, bundle);
  const auto rep = eval::attention_report(h.mdl, prop, topo);
  std::vector<std::string> wallets;
  wallets.reserve(rep.users.size());
  for (const int u : rep.users) wallets.push_back(m.users[u]);
  py::dict d;
  d["users"] = wallets;
  d["scores"] = rep.scores;
  d["mean"] = rep.mean;
  d["quartiles"] = rep.quartiles;
  return d;
}

py::dict power_law_py(const data::InteractionMatrix& m) {
  const auto rep = data::power_law_report(m);
  std::vector<py::tuple> bins;
  bins.reserve(rep.bins.size());
  for (const auto& b : rep.bins) {
    bins.push_back(py::make_tuple(b.degree, b.items, b.users));
  }
  py::dict d;
  d["bins"] = bins;
  d["item_slope"] = rep.item_slope;
  d["user_slope"] = rep.user_slope;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multi-modal graph attention recommender core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<DataError>(m, "DataError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<ConfigError>(m, "ConfigError");

  m.def("derive_seed", &derive_seed, py::arg("base"), py::arg("tag"),
        py::arg("a") = 0, py::arg("b") = 0,
        "fold a tag and stream indices into a base seed");
  m.def("zscore", &feat::zscore, py::arg("values"));
  m.def("tile_scalar", &feat::tile_scalar, py::arg("value"),
        py::arg("dim") = feat::kTileDim);
  m.def(
      "recall_at_k",
      [](const std::vector<int>& ranked, const std::vector<int>& relevant,
         int k) {
        return eval::recall_at_k(
            ranked, std::unordered_set<int>(relevant.begin(), relevant.end()),
            k);
      },
      py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def(
      "ndcg_at_k",
      [](const std::vector<int>& ranked, const std::vector<int>& relevant,
         int k) {
        return eval::ndcg_at_k(
            ranked, std::unordered_set<int>(relevant.begin(), relevant.end()),
            k);
      },
      py::arg("ranked"), py::arg("relevant"), py::arg("k"));

  py::class_<data::TransactionLog>(m, "TransactionLog")
      .def_readonly("collection", &data::TransactionLog::collection)
      .def("__len__",
           [](const data::TransactionLog& log) { return log.records.size(); });

  m.def("load_transactions", &data::load_transactions, py::arg("path"),
        py::arg("collection") = "");
  m.def(
      "filter_users",
      [](const data::TransactionLog& log, int min_interactions) {
        return data::filter_users(log, min_interactions);
      },
      py::arg("log"), py::arg("min_interactions") = 5);
  m.def(
      "compute_price_labels",
      [](const data::TransactionLog& log) {
        const auto labels = data::compute_price_labels(log);
        return std::vector<int>(labels.begin(), labels.end());
      },
      py::arg("log"),
      "1 where the same token's next sale is strictly dearer");

  py::class_<data::InteractionMatrix>(m, "InteractionMatrix")
      .def_readonly("users", &data::InteractionMatrix::users)
      .def_readonly("items", &data::InteractionMatrix::items)
      .def_readonly("end_timestamp", &data::InteractionMatrix::end_timestamp)
      .def("__len__", [](const data::InteractionMatrix& mat) {
        return mat.interactions.size();
      });

  m.def("build_interactions", &data::build_interactions, py::arg("log"));

  py::class_<data::SplitAssignment>(m, "SplitAssignment")
      .def_property_readonly("tags", [](const data::SplitAssignment& s) {
        std::vector<int> tags;
        tags.reserve(s.tags.size());
        for (const auto t : s.tags) tags.push_back(static_cast<int>(t));
        return tags;
      });

  m.def("split_interactions", &data::split_interactions, py::arg("matrix"),
        py::arg("seed"),
        "hold out 40% of each user's events, validation first");
  m.def("power_law_report", &power_law_py, py::arg("matrix"));

  py::class_<feat::FeatureBundle>(m, "FeatureBundle")
      .def_property_readonly("image_dim", &feat::FeatureBundle::image_dim)
      .def_property_readonly("text_dim", &feat::FeatureBundle::text_dim)
      .def_property_readonly("n_items",
                             [](const feat::FeatureBundle& b) {
                               return b.image.size();
                             })
      .def_property_readonly("n_users", [](const feat::FeatureBundle& b) {
        return b.user.size();
      });

  m.def("build_features", &build_features, py::arg("log"), py::arg("matrix"),
        py::arg("image"), py::arg("text"),
        "tile and z-score the scalar modalities around the given image and "
        "text rows; returns (bundle, stats)");

  py::class_<training::TrainConfig>(m, "TrainConfig")
      .def(py::init([](double learning_rate, int epochs, int batch_size,
                       int dim, double alpha, int hops, double lambda_,
                       std::uint64_t seed, int d_k, double clip_norm) {
             training::TrainConfig cfg;
             cfg.learning_rate = learning_rate;
             cfg.epochs = epochs;
             cfg.batch_size = batch_size;
             cfg.d = dim;
             cfg.alpha = alpha;
             cfg.hops = hops;
             cfg.lambda = lambda_;
             cfg.seed = seed;
             cfg.d_k = d_k;
             cfg.clip_norm = clip_norm;
             cfg.validate();
             return cfg;
           }),
           py::arg("learning_rate") = 0.01, py::arg("epochs") = 50,
           py::arg("batch_size") = 1024, py::arg("dim") = 128,
           py::arg("alpha") = 0.2, py::arg("hops") = 2,
           py::arg("lambda_") = 0.1, py::arg("seed") = 0,
           py::arg("d_k") = 64, py::arg("clip_norm") = 5.0)
      .def_readonly("learning_rate", &training::TrainConfig::learning_rate)
      .def_readonly("epochs", &training::TrainConfig::epochs)
      .def_readonly("batch_size", &training::TrainConfig::batch_size)
      .def_readonly("dim", &training::TrainConfig::d)
      .def_readonly("alpha", &training::TrainConfig::alpha)
      .def_readonly("hops", &training::TrainConfig::hops)
      .def_readonly("lambda_", &training::TrainConfig::lambda)
      .def_readonly("seed", &training::TrainConfig::seed)
      .def_readonly("d_k", &training::TrainConfig::d_k)
      .def_readonly("clip_norm", &training::TrainConfig::clip_norm);

  py::class_<ModelHandle>(m, "Model")
      .def_property_readonly(
          "config", [](const ModelHandle& h) { return h.cfg; });

  py::class_<TrainResult, ModelHandle>(m, "TrainResult")
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_readonly("best_metric", &TrainResult::best_metric)
      .def_property_readonly("trace",
                             [](const TrainResult& r) {
                               std::vector<py::dict> rows;
                               for (const auto& t : r.trace) {
                                 py::dict d;
                                 d["loss"] = t.loss;
                                 d["rec_loss"] = t.rec_loss;
                                 d["price_loss"] = t.price_loss;
                                 d["val_recall"] = t.val_recall;
                                 rows.push_back(std::move(d));
                               }
                               return rows;
                             })
      .def(
          "save",
          [](const TrainResult& r, const std::string& path) {
            ckpt::save_checkpoint(r.best, path);
          },
          py::arg("path"), "write the best-epoch snapshot");

  m.def("train", &train_py, py::arg("matrix"), py::arg("split"),
        py::arg("bundle"), py::arg("config"), py::arg("verbose") = false);
  m.def("load_model", &load_model, py::arg("path"), py::arg("matrix"),
        py::arg("bundle"),
        "rebuild a model from a checkpoint written by train().save()");
  m.def("evaluate", &evaluate_py, py::arg("model"), py::arg("matrix"),
        py::arg("split"), py::arg("bundle"),
        py::arg("ks") = std::vector<int>{10, 50}, py::arg("negatives") = 100,
        py::arg("target") = "test");
  m.def("attention", &attention_py, py::arg("model"), py::arg("matrix"),
        py::arg("split"), py::arg("bundle"),
        "raw per-user modality attention scores");
}
