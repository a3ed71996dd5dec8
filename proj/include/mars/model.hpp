#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mars/features.hpp"
#include "mars/fusion.hpp"
#include "mars/graph.hpp"
#include "mars/heads.hpp"
#include "mars/numerics.hpp"

// The assembled recommender: four modality graphs over one topology, shared
// ID embeddings, cross-modal attention fusion, and both scoring heads.

namespace mars::model {

struct ModelConfig {
  int d = 128;   // propagation width per hop
  int hops = 2;  // propagation depth L
  int d_k = 64;  // attention projection width

  // native item feature width per modality (image, text, price, transaction)
  std::array<int, 4> feature_dims = {0, 0, 0, 0};

  int ld() const { return d * hops; }
};

ModelConfig config_for_bundle(const feat::FeatureBundle& bundle, int d,
                              int hops, int d_k);

struct Model {
  ModelConfig cfg;
  std::array<graph::ModalWeights, 4> modal;
  graph::IdEmbeddings ids;
  fusion::FusionWeights fuse;
  heads::PriceHead price;

  // every trainable tensor, fixed order; names are stable across runs and
  // releases so checkpoints stay portable
  std::vector<num::Tensor> parameters() const;
  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  // tensors entering the L2 penalty: ID embeddings and weight matrices,
  // never the price-head biases
  std::vector<num::Tensor> regularized() const;
};

Model init_model(const ModelConfig& cfg, int n_users, int n_items,
                 std::uint64_t seed);

// L-hop propagation of all four modalities over the shared topology.
struct Propagated {
  std::array<std::vector<num::Tensor>, 4> user;  // [modality][user]
  std::array<std::vector<num::Tensor>, 4> item;  // undefined when inactive
};

Propagated propagate_all(const Model& m, const graph::Topology& topo,
                         const feat::FeatureBundle& features);

// Mean over modalities of one item's propagated embedding.
num::Tensor item_embedding(const Propagated& p, int item);

// Fused embedding and attention scores of one user against a positive set
// (the batch positives in training, the user's own training positives at
// evaluation time).
fusion::FusionOutput fuse_user(const Model& m, const Propagated& p, int user,
                               const std::vector<int>& positives);

}  // namespace mars::model
