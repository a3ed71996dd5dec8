#include "mars/model.hpp"

#include "mars/errors.hpp"
#include "mars/rng.hpp"

namespace mars::model {

using num::Tensor;

ModelConfig config_for_bundle(const feat::FeatureBundle& bundle, int d,
                              int hops, int d_k) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.hops = hops;
  cfg.d_k = d_k;
  cfg.feature_dims = {bundle.image_dim(), bundle.text_dim(), feat::kTileDim,
                      feat::kTileDim};
  for (int m = 0; m < 4; ++m) {
    if (cfg.feature_dims[m] <= 0) {
      throw DataError(std::string("model: empty feature space for ") +
                      graph::modality_name(static_cast<graph::Modality>(m)));
    }
  }
  return cfg;
}

Model init_model(const ModelConfig& cfg, int n_users, int n_items,
                 std::uint64_t seed) {
  if (cfg.d <= 0 || cfg.d_k <= 0) throw DataError("model: width must be > 0");
  if (cfg.hops < 1 || cfg.hops > 3) {
    throw DataError("model: hop count must be in {1,2,3}");
  }
  Model m;
  m.cfg = cfg;
  for (int mod = 0; mod < 4; ++mod) {
    Rng rng(derive_seed(seed, "modal", static_cast<std::uint64_t>(mod)));
    m.modal[mod] =
        graph::init_modal_weights(cfg.d, cfg.feature_dims[mod], cfg.hops, rng);
  }
  {
    Rng rng(derive_seed(seed, "ids"));
    m.ids = graph::init_id_embeddings(n_users, n_items, cfg.d, rng);
  }
  {
    Rng rng(derive_seed(seed, "fusion"));
    m.fuse = fusion::init_fusion_weights(cfg.ld(), cfg.d_k, rng);
  }
  {
    Rng rng(derive_seed(seed, "price"));
    m.price = heads::init_price_head(cfg.ld(), cfg.d, rng);
  }
  return m;
}

std::vector<num::Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_parameters()) {
    (void)name;
    out.push_back(t);
  }
  return out;
}

std::vector<std::pair<std::string, num::Tensor>> Model::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (int mod = 0; mod < 4; ++mod) {
    const std::string base = graph::modality_name(static_cast<graph::Modality>(mod));
    const auto& w = modal[mod];
    out.emplace_back(base + ".w_user", w.w_user);
    out.emplace_back(base + ".w1_in", w.w1_in);
    out.emplace_back(base + ".w2_in", w.w2_in);
    if (cfg.hops >= 2) {
      out.emplace_back(base + ".w1_h", w.w1_h);
      out.emplace_back(base + ".w2_h", w.w2_h);
    }
    out.emplace_back(base + ".w3", w.w3);
  }
  for (std::size_t u = 0; u < ids.user.size(); ++u) {
    out.emplace_back("id.user." + std::to_string(u), ids.user[u]);
  }
  for (std::size_t i = 0; i < ids.item.size(); ++i) {
    out.emplace_back("id.item." + std::to_string(i), ids.item[i]);
  }
  out.emplace_back("fusion.wq", fuse.wq);
  out.emplace_back("fusion.wk", fuse.wk);
  out.emplace_back("fusion.wv", fuse.wv);
  out.emplace_back("price.w1", price.w1);
  out.emplace_back("price.b1", price.b1);
  out.emplace_back("price.w2", price.w2);
  out.emplace_back("price.b2", price.b2);
  return out;
}

std::vector<num::Tensor> Model::regularized() const {
  std::vector<Tensor> out;
  for (int mod = 0; mod < 4; ++mod) {
    for (const auto& t : modal[mod].trainable(cfg.hops)) out.push_back(t);
  }
  for (const auto& t : ids.user) out.push_back(t);
  for (const auto& t : ids.item) out.push_back(t);
  out.push_back(fuse.wq);
  out.push_back(fuse.wk);
  out.push_back(fuse.wv);
  out.push_back(price.w1);
  out.push_back(price.w2);
  return out;
}

Propagated propagate_all(const Model& m, const graph::Topology& topo,
                         const feat::FeatureBundle& features) {
  const std::array<const std::vector<std::vector<double>>*, 4> item_feats = {
      &features.image, &features.text, &features.price, &features.transaction};
  Propagated out;
  for (int mod = 0; mod < 4; ++mod) {
    if (static_cast<int>(item_feats[mod]->size()) != topo.n_items ||
        static_cast<int>(features.user.size()) != topo.n_users) {
      throw DataError("model: feature rows do not match the graph");
    }
    auto user_init = graph::user_initial_embeddings(m.modal[mod], features.user);
    auto item_init = graph::item_initial_embeddings(*item_feats[mod]);
    auto prop = graph::propagate(topo, user_init, item_init, m.ids,
                                 m.modal[mod], m.cfg.hops);
    out.user[mod] = std::move(prop.user_final);
    out.item[mod] = std::move(prop.item_final);
  }
  return out;
}

num::Tensor item_embedding(const Propagated& p, int item) {
  for (int mod = 0; mod < 4; ++mod) {
    if (!p.item[mod][item].defined()) {
      throw DataError("model: item " + std::to_string(item) +
                      " was not propagated");
    }
  }
  return heads::item_final_embedding({p.item[0][item], p.item[1][item],
                                      p.item[2][item], p.item[3][item]});
}

fusion::FusionOutput fuse_user(const Model& m, const Propagated& p, int user,
                               const std::vector<int>& positives) {
  const Tensor query = fusion::fuse_query({p.user[0][user], p.user[1][user],
                                           p.user[2][user], p.user[3][user]});
  const auto slots = fusion::build_keys_values(
      {&p.item[0], &p.item[1], &p.item[2], &p.item[3]}, positives);
  return fusion::cross_attend(query, slots, m.fuse);
}

}  // namespace mars::model
