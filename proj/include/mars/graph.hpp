#pragma once

#include <cstdint>
#include <vector>

#include "mars/dataset.hpp"
#include "mars/numerics.hpp"
#include "mars/rng.hpp"

// Bipartite user-item graphs, one per modality over a shared topology, and
// the L-hop gated attention propagation producing node representations.

namespace mars::graph {

enum class Modality : int { image = 0, text = 1, price = 2, transaction = 3 };
inline constexpr int kModalities = 4;
const char* modality_name(Modality m);

struct Topology {
  int n_users = 0;
  int n_items = 0;
  std::vector<std::vector<int>> user_items;  // ascending neighbor lists
  std::vector<std::vector<int>> item_users;
  std::vector<char> item_active;  // items with at least one training edge
  int inactive_items = 0;
};

// Training-split edges only. Distinct (u,i) pairs become undirected edges.
// Users must keep at least one training edge; items without one are marked
// inactive and take no part in propagation.
Topology build_topology(const data::InteractionMatrix& m,
                        const data::SplitAssignment& split);

// Per-modality transforms. Layer 1 consumes native-width inputs (d_m), the
// shared hidden transforms take over from layer 2 on.
struct ModalWeights {
  num::Tensor w_user;  // d_m x 3, user feature projection
  num::Tensor w1_in;   // d x d_m, message transform at layer 1
  num::Tensor w2_in;   // d x d_m, self transform at layer 1
  num::Tensor w1_h;    // d x d, layers >= 2
  num::Tensor w2_h;    // d x d, layers >= 2
  num::Tensor w3;      // d x d, neighborhood transform, all layers

  std::vector<num::Tensor> trainable(int hops) const;
};

ModalWeights init_modal_weights(int d, int d_m, int hops, Rng& rng);

// One learned vector per node, shared by all modalities.
struct IdEmbeddings {
  std::vector<num::Tensor> user;  // d dims each
  std::vector<num::Tensor> item;
};

IdEmbeddings init_id_embeddings(int n_users, int n_items, int d, Rng& rng);

// tanh(W_u . x) per user row; differentiable through w_user.
std::vector<num::Tensor> user_initial_embeddings(
    const ModalWeights& weights,
    const std::vector<std::vector<double>>& user_features);

// Items enter propagation as their raw modality feature rows.
std::vector<num::Tensor> item_initial_embeddings(
    const std::vector<std::vector<double>>& item_features);

// Attention and gate coefficients of one ego node over its neighbors.
// projected holds W1.e_t stacked (k x d), p_h is the ego's own projection,
// id_h its ID embedding. f_a softmax-normalizes scaled dot products, f_g
// sigmoid-gates each message by its agreement with the ego identity.
struct GateCoefficients {
  num::Tensor f_a;  // k, sums to 1
  num::Tensor f_g;  // k, in (0,1)
};

GateCoefficients attention_and_gate(const num::Tensor& p_h,
                                    const num::Tensor& id_h,
                                    const num::Tensor& projected);

struct PropagationResult {
  std::vector<num::Tensor> user_final;  // L*d dims
  std::vector<num::Tensor> item_final;  // undefined for inactive items
};

// L rounds of gated attention message passing; the output per node is the
// concatenation of all layer outputs.
PropagationResult propagate(const Topology& topo,
                            const std::vector<num::Tensor>& user_init,
                            const std::vector<num::Tensor>& item_init,
                            const IdEmbeddings& ids, const ModalWeights& w,
                            int hops);

}  // namespace mars::graph
