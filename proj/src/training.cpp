#include "mars/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <unordered_map>

#include "mars/errors.hpp"
#include "mars/evaluation.hpp"
#include "mars/optim.hpp"
#include "mars/rng.hpp"

namespace mars::training {

using num::Tensor;

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("config: learning_rate must be > 0");
  if (epochs <= 0) throw ConfigError("config: epochs must be > 0");
  if (batch_size <= 0) throw ConfigError("config: batch_size must be > 0");
  if (d <= 0) throw ConfigError("config: dim must be > 0");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("config: alpha outside [0,1]");
  if (hops < 1 || hops > 3) throw ConfigError("config: hops must be 1, 2 or 3");
  if (lambda < 0.0) throw ConfigError("config: lambda must be >= 0");
  if (d_k <= 0) throw ConfigError("config: d_k must be > 0");
}

TrainConfig TrainConfig::from(const config::KeyValues& kv) {
  TrainConfig cfg;
  if (auto v = kv.get_double("learning_rate")) cfg.learning_rate = *v;
  if (auto v = kv.get_int("epochs")) cfg.epochs = static_cast<int>(*v);
  if (auto v = kv.get_int("batch_size")) cfg.batch_size = static_cast<int>(*v);
  if (auto v = kv.get_int("dim")) cfg.d = static_cast<int>(*v);
  if (auto v = kv.get_double("alpha")) cfg.alpha = *v;
  if (auto v = kv.get_int("hops")) cfg.hops = static_cast<int>(*v);
  if (auto v = kv.get_double("lambda")) cfg.lambda = *v;
  if (auto v = kv.get_int("seed")) cfg.seed = static_cast<std::uint64_t>(*v);
  if (auto v = kv.get_int("d_k")) cfg.d_k = static_cast<int>(*v);
  if (auto v = kv.get_double("clip_norm")) cfg.clip_norm = *v;
  cfg.validate();
  return cfg;
}

config::KeyValues TrainConfig::to_key_values() const {
  config::KeyValues kv;
  auto num_str = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  kv.set("learning_rate", num_str(learning_rate));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("dim", std::to_string(d));
  kv.set("alpha", num_str(alpha));
  kv.set("hops", std::to_string(hops));
  kv.set("lambda", num_str(lambda));
  kv.set("seed", std::to_string(seed));
  kv.set("d_k", std::to_string(d_k));
  kv.set("clip_norm", num_str(clip_norm));
  return kv;
}

namespace {

// one positive pair with its 5 sampled negatives
struct PairGroup {
  int user = 0;
  int pos = 0;
  std::vector<int> negs;
};

std::vector<PairGroup> group_triples(const std::vector<data::Triple>& triples) {
  std::vector<PairGroup> groups;
  for (const auto& t : triples) {
    if (groups.empty() || groups.back().user != t.user ||
        groups.back().pos != t.pos) {
      groups.push_back({t.user, t.pos, {}});
    }
    groups.back().negs.push_back(t.neg);
  }
  return groups;
}

ckpt::Checkpoint snapshot(const model::Model& m, const TrainConfig& cfg,
                          int epoch, double metric) {
  ckpt::Checkpoint c;
  c.config_text = cfg.to_key_values().render();
  c.epoch = static_cast<std::uint32_t>(epoch);
  c.metric = metric;
  for (const auto& [name, t] : m.named_parameters()) {
    c.tensors.emplace_back(
        name, Tensor::from_values(
                  t.shape(),
                  std::vector<double>(t.values().begin(), t.values().end())));
  }
  return c;
}

}  // namespace

TrainOutput train(const data::InteractionMatrix& m,
                  const data::SplitAssignment& split,
                  const feat::FeatureBundle& features, const TrainConfig& cfg,
                  std::ostream* log) {
  cfg.validate();
  const auto topo = graph::build_topology(m, split);
  const auto mcfg =
      model::config_for_bundle(features, cfg.d, cfg.hops, cfg.d_k);

  TrainOutput out;
  out.model = model::init_model(mcfg, topo.n_users, topo.n_items, cfg.seed);
  auto params = out.model.parameters();
  num::Adam adam(params, cfg.learning_rate);

  // price label per training pair: the latest training event decides
  std::unordered_map<std::int64_t, double> pair_label;
  for (std::size_t e = 0; e < m.interactions.size(); ++e) {
    if (split.tags[e] != data::Split::train) continue;
    const auto& ev = m.interactions[e];
    const std::int64_t key =
        static_cast<std::int64_t>(ev.user) * topo.n_items + ev.item;
    pair_label[key] = static_cast<double>(ev.label);
  }

  const std::uint64_t val_seed = derive_seed(cfg.seed, "valcand");
  int skipped_triples = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto triples =
        data::sample_negatives(m, split, derive_seed(cfg.seed, "neg", epoch));
    auto groups = group_triples(triples);
    Rng order_rng(derive_seed(cfg.seed, "order", epoch));
    order_rng.shuffle(groups);

    double epoch_loss = 0.0, epoch_rec = 0.0, epoch_price = 0.0;
    int batches = 0;

    for (std::size_t start = 0; start < groups.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(groups.size(), start + static_cast<std::size_t>(cfg.batch_size));

      std::vector<int> pos_b;
      for (std::size_t g = start; g < stop; ++g) pos_b.push_back(groups[g].pos);
      std::sort(pos_b.begin(), pos_b.end());
      pos_b.erase(std::unique(pos_b.begin(), pos_b.end()), pos_b.end());

      const auto prop = model::propagate_all(out.model, topo, features);
      const auto slots = fusion::build_keys_values(
          {&prop.item[0], &prop.item[1], &prop.item[2], &prop.item[3]}, pos_b);

      std::unordered_map<int, Tensor> user_emb;
      std::unordered_map<int, Tensor> item_emb;
      auto user_of = [&](int u) {
        auto it = user_emb.find(u);
        if (it != user_emb.end()) return it->second;
        const Tensor query =
            fusion::fuse_query({prop.user[0][u], prop.user[1][u],
                                prop.user[2][u], prop.user[3][u]});
        Tensor e_u = fusion::cross_attend(query, slots, out.model.fuse).e_u;
        user_emb.emplace(u, e_u);
        return e_u;
      };
      auto item_of = [&](int i) {
        auto it = item_emb.find(i);
        if (it != item_emb.end()) return it->second;
        Tensor e_i = model::item_embedding(prop, i);
        item_emb.emplace(i, e_i);
        return e_i;
      };

      std::vector<Tensor> pos_scores, neg_scores;
      for (std::size_t g = start; g < stop; ++g) {
        const auto& grp = groups[g];
        const Tensor e_u = user_of(grp.user);
        const Tensor e_pos = item_of(grp.pos);
        for (int neg : grp.negs) {
          if (!topo.item_active[neg]) {
            // only reachable through the uniform sampling fallback on
            // degenerate data; such items have no representation
            ++skipped_triples;
            continue;
          }
          pos_scores.push_back(heads::rec_score(e_u, e_pos));
          neg_scores.push_back(heads::rec_score(e_u, item_of(neg)));
        }
      }
      if (pos_scores.empty()) continue;

      const Tensor l_rec =
          heads::bpr_loss(num::concat(pos_scores), num::concat(neg_scores));

      std::vector<Tensor> preds;
      std::vector<double> labels;
      for (std::size_t g = start; g < stop; ++g) {
        const auto& grp = groups[g];
        preds.push_back(heads::price_predict(user_of(grp.user),
                                             item_of(grp.pos), out.model.price));
        const std::int64_t key =
            static_cast<std::int64_t>(grp.user) * topo.n_items + grp.pos;
        labels.push_back(pair_label.at(key));
      }
      const Tensor l_price =
          heads::bce_loss(num::concat(preds), Tensor::vector(labels));

      const Tensor total = heads::combined_loss(
          l_rec, l_price, cfg.alpha, cfg.lambda, out.model.regularized());
      if (!std::isfinite(total.item())) {
        throw num::NonFiniteError(
            "training: non-finite loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(batches + 1));
      }

      adam.zero_grad();
      num::backward(total);
      if (cfg.clip_norm > 0.0) num::clip_gradients(params, cfg.clip_norm);
      adam.step();

      epoch_loss += total.item();
      epoch_rec += l_rec.item();
      epoch_price += l_price.item();
      ++batches;
    }

    EpochStats stats;
    if (batches > 0) {
      stats.loss = epoch_loss / batches;
      stats.rec_loss = epoch_rec / batches;
      stats.price_loss = epoch_price / batches;
    }
    {
      num::NoGradGuard ng;
      const auto prop = model::propagate_all(out.model, topo, features);
      stats.val_recall = eval::mean_recall_for_split(
          out.model, prop, topo, m, split, data::Split::validation, val_seed,
          50);
    }
    out.trace.push_back(stats);

    if (out.best_epoch == 0 || stats.val_recall > out.best_metric) {
      out.best_epoch = epoch;
      out.best_metric = stats.val_recall;
      out.best = snapshot(out.model, cfg, epoch, stats.val_recall);
    }

    if (log) {
      (*log) << "epoch " << epoch << " loss " << stats.loss << " rec "
             << stats.rec_loss << " price " << stats.price_loss
             << " val_recall@50 " << stats.val_recall << "\n";
    }
  }

  if (log && skipped_triples > 0) {
    (*log) << "skipped " << skipped_triples
           << " triples with unpropagated negatives\n";
  }
  return out;
}

SearchResult random_search(const data::InteractionMatrix& m,
                           const data::SplitAssignment& split,
                           const feat::FeatureBundle& features,
                           const TrainConfig& base, const SearchSpace& space,
                           int trials, std::uint64_t seed,
                           std::ostream* log) {
  if (trials < 1) throw ConfigError("search: trials must be >= 1");
  if (space.batch_sizes.empty() || space.dims.empty() ||
      space.alphas.empty() || space.hop_choices.empty() ||
      space.lambdas.empty()) {
    throw ConfigError("search: empty dimension in the search space");
  }

  SearchResult result;
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, "search", static_cast<std::uint64_t>(t)));
    TrainConfig cfg = base;
    cfg.batch_size = space.batch_sizes[rng.below(space.batch_sizes.size())];
    cfg.d = space.dims[rng.below(space.dims.size())];
    cfg.alpha = space.alphas[rng.below(space.alphas.size())];
    cfg.hops = space.hop_choices[rng.below(space.hop_choices.size())];
    cfg.lambda = space.lambdas[rng.below(space.lambdas.size())];

    if (log) {
      (*log) << "trial " << (t + 1) << "/" << trials << ": batch "
             << cfg.batch_size << " dim " << cfg.d << " alpha " << cfg.alpha
             << " hops " << cfg.hops << " lambda " << cfg.lambda << "\n";
    }
    auto run = train(m, split, features, cfg, log);
    result.trials.push_back({cfg, run.best_metric});
    if (result.trials.size() == 1 || run.best_metric > result.best_metric) {
      result.best = cfg;
      result.best_metric = run.best_metric;
    }
  }
  return result;
}

}  // namespace mars::training
