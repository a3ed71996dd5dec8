#include "mars/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mars/errors.hpp"

namespace mars::graph {

using num::Tensor;

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::text: return "text";
    case Modality::price: return "price";
    case Modality::transaction: return "transaction";
  }
  return "?";
}

Topology build_topology(const data::InteractionMatrix& m,
                        const data::SplitAssignment& split) {
  Topology topo;
  topo.n_users = static_cast<int>(m.users.size());
  topo.n_items = static_cast<int>(m.items.size());
  std::set<std::pair<int, int>> edges;
  for (std::size_t e = 0; e < m.interactions.size(); ++e) {
    if (split.tags[e] != data::Split::train) continue;
    edges.insert({m.interactions[e].user, m.interactions[e].item});
  }
  topo.user_items.resize(topo.n_users);
  topo.item_users.resize(topo.n_items);
  for (const auto& [u, i] : edges) {
    topo.user_items[u].push_back(i);
    topo.item_users[i].push_back(u);
  }
  for (int u = 0; u < topo.n_users; ++u) {
    if (topo.user_items[u].empty()) {
      throw DataError("graph: user " + m.users[u] + " has no training edges");
    }
  }
  topo.item_active.assign(topo.n_items, 0);
  for (int i = 0; i < topo.n_items; ++i) {
    topo.item_active[i] = topo.item_users[i].empty() ? 0 : 1;
    topo.inactive_items += topo.item_active[i] ? 0 : 1;
  }
  return topo;
}

namespace {

Tensor glorot(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  for (auto& x : w) x = rng.uniform(-a, a);
  return Tensor::matrix(rows, cols, std::move(w), true);
}

}  // namespace

std::vector<num::Tensor> ModalWeights::trainable(int hops) const {
  std::vector<Tensor> out = {w_user, w1_in, w2_in, w3};
  if (hops >= 2) {
    out.push_back(w1_h);
    out.push_back(w2_h);
  }
  return out;
}

ModalWeights init_modal_weights(int d, int d_m, int hops, Rng& rng) {
  ModalWeights w;
  w.w_user = glorot(d_m, 3, rng);
  w.w1_in = glorot(d, d_m, rng);
  w.w2_in = glorot(d, d_m, rng);
  if (hops >= 2) {
    w.w1_h = glorot(d, d, rng);
    w.w2_h = glorot(d, d, rng);
  }
  w.w3 = glorot(d, d, rng);
  return w;
}

IdEmbeddings init_id_embeddings(int n_users, int n_items, int d, Rng& rng) {
  IdEmbeddings ids;
  auto draw = [&] {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = rng.normal(0.0, 0.01);
    return Tensor::vector(std::move(v), true);
  };
  ids.user.reserve(n_users);
  ids.item.reserve(n_items);
  for (int u = 0; u < n_users; ++u) ids.user.push_back(draw());
  for (int i = 0; i < n_items; ++i) ids.item.push_back(draw());
  return ids;
}

std::vector<num::Tensor> user_initial_embeddings(
    const ModalWeights& weights,
    const std::vector<std::vector<double>>& user_features) {
  std::vector<Tensor> out;
  out.reserve(user_features.size());
  for (const auto& row : user_features) {
    out.push_back(num::tanh(num::matmul(weights.w_user, Tensor::vector(row))));
  }
  return out;
}

std::vector<num::Tensor> item_initial_embeddings(
    const std::vector<std::vector<double>>& item_features) {
  std::vector<Tensor> out;
  out.reserve(item_features.size());
  for (const auto& row : item_features) out.push_back(Tensor::vector(row));
  return out;
}

GateCoefficients attention_and_gate(const num::Tensor& p_h,
                                    const num::Tensor& id_h,
                                    const num::Tensor& projected) {
  const int d = static_cast<int>(p_h.size());
  GateCoefficients out;
  const Tensor scores = num::scalar_mul(num::matmul(projected, p_h),
                                        1.0 / std::sqrt(static_cast<double>(d)));
  out.f_a = num::softmax(scores);
  out.f_g = num::sigmoid(num::matmul(projected, id_h));
  return out;
}

PropagationResult propagate(const Topology& topo,
                            const std::vector<num::Tensor>& user_init,
                            const std::vector<num::Tensor>& item_init,
                            const IdEmbeddings& ids, const ModalWeights& w,
                            int hops) {
  if (hops < 1 || hops > 3) {
    throw DataError("propagate: hop count must be in {1,2,3}");
  }
  if (static_cast<int>(user_init.size()) != topo.n_users ||
      static_cast<int>(item_init.size()) != topo.n_items) {
    throw DataError("propagate: embedding count does not match the graph");
  }

  std::vector<Tensor> users = user_init;
  std::vector<Tensor> items = item_init;
  std::vector<std::vector<Tensor>> user_layers, item_layers;

  for (int layer = 0; layer < hops; ++layer) {
    const Tensor& w1 = layer == 0 ? w.w1_in : w.w1_h;
    const Tensor& w2 = layer == 0 ? w.w2_in : w.w2_h;

    // project every node once per layer; messages reuse these
    std::vector<Tensor> p_user(topo.n_users), p_item(topo.n_items);
    for (int u = 0; u < topo.n_users; ++u) p_user[u] = num::matmul(w1, users[u]);
    for (int i = 0; i < topo.n_items; ++i) {
      if (topo.item_active[i]) p_item[i] = num::matmul(w1, items[i]);
    }

    auto update = [&](const Tensor& prev, const Tensor& p_self,
                      const Tensor& id_self, const std::vector<int>& neighbors,
                      const std::vector<Tensor>& p_other) {
      if (neighbors.empty()) {
        throw DataError("propagate: node with empty neighborhood");
      }
      std::vector<Tensor> rows;
      rows.reserve(neighbors.size());
      for (int t : neighbors) rows.push_back(p_other[t]);
      const Tensor projected = num::stack_rows(rows);
      const auto gc = attention_and_gate(p_self, id_self, projected);
      const Tensor message =
          num::matmul(num::mul(gc.f_a, gc.f_g), projected);
      const Tensor e_n = num::leaky_relu(message);
      const Tensor tilde =
          num::leaky_relu(num::add(num::matmul(w2, prev), id_self));
      return num::leaky_relu(num::add(num::matmul(w.w3, e_n), tilde));
    };

    std::vector<Tensor> next_users(topo.n_users), next_items(topo.n_items);
    for (int u = 0; u < topo.n_users; ++u) {
      next_users[u] = update(users[u], p_user[u], ids.user[u],
                             topo.user_items[u], p_item);
    }
    for (int i = 0; i < topo.n_items; ++i) {
      if (!topo.item_active[i]) continue;
      next_items[i] = update(items[i], p_item[i], ids.item[i],
                             topo.item_users[i], p_user);
    }
    users = std::move(next_users);
    items = std::move(next_items);
    user_layers.push_back(users);
    item_layers.push_back(items);
  }

  PropagationResult out;
  out.user_final.resize(topo.n_users);
  out.item_final.resize(topo.n_items);
  for (int u = 0; u < topo.n_users; ++u) {
    std::vector<Tensor> parts;
    for (int l = 0; l < hops; ++l) parts.push_back(user_layers[l][u]);
    out.user_final[u] = hops == 1 ? parts[0] : num::concat(parts);
  }
  for (int i = 0; i < topo.n_items; ++i) {
    if (!topo.item_active[i]) continue;
    std::vector<Tensor> parts;
    for (int l = 0; l < hops; ++l) parts.push_back(item_layers[l][i]);
    out.item_final[i] = hops == 1 ? parts[0] : num::concat(parts);
  }
  return out;
}

}  // namespace mars::graph
