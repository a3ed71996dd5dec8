// End-to-end acceptance checks. Each criterion prints one pass/fail line;
// the process exits nonzero if any gating check fails. The last check is
// informational only: it needs externally supplied collection data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
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
#include "mars/fusion.hpp"
#include "mars/graph.hpp"
#include "mars/heads.hpp"
#include "mars/model.hpp"
#include "mars/numerics.hpp"
#include "mars/rng.hpp"
#include "mars/training.hpp"

using namespace mars;
using num::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int n, const std::string& name, bool pass,
            const std::string& detail) {
  std::cout << "criterion " << n << " (" << name << "): "
            << (pass ? "pass" : "FAIL");
  if (!detail.empty()) std::cout << " - " << detail;
  std::cout << std::endl;
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- fixtures

struct Instance {
  data::InteractionMatrix m;
  data::SplitAssignment split;
  feat::FeatureBundle bundle;
};

void fill_rows(std::vector<std::vector<double>>& rows, std::size_t n,
               int width, Rng& rng) {
  rows.assign(n, {});
  for (auto& r : rows) {
    r.resize(width);
    for (auto& v : r) v = rng.uniform(-1.0, 1.0);
  }
}

// 5 users x 5 purchases over 10 items; small native widths keep the finite
// difference sweep quick
Instance toy10(std::uint64_t split_seed) {
  data::TransactionLog log;
  std::int64_t ts = 1;
  for (int u = 0; u < 5; ++u) {
    for (int k = 0; k < 5; ++k) {
      const int i = (2 * u + k) % 10;
      data::TransactionRecord r;
      r.collection = "c";
      r.token_id = "i" + std::string(i < 10 ? "0" : "") + std::to_string(i);
      r.buyer = "u" + std::to_string(u);
      r.seller = "s";
      r.price = 1.0 + 0.3 * ((u + k) % 4);
      r.currency = "ETH";
      r.timestamp = ts++ * 86400;
      log.records.push_back(r);
    }
  }
  Instance t;
  t.m = data::build_interactions(log);
  t.split = data::split_interactions(t.m, split_seed);
  Rng rng(4242);
  fill_rows(t.bundle.image, t.m.items.size(), 3, rng);
  fill_rows(t.bundle.text, t.m.items.size(), 4, rng);
  fill_rows(t.bundle.price, t.m.items.size(), feat::kTileDim, rng);
  fill_rows(t.bundle.transaction, t.m.items.size(), feat::kTileDim, rng);
  fill_rows(t.bundle.user, t.m.users.size(), 3, rng);
  return t;
}

training::TrainConfig toy_config() {
  training::TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.d = 8;
  cfg.alpha = 0.2;
  cfg.hops = 2;
  cfg.lambda = 0.001;
  cfg.seed = 2023;
  cfg.d_k = 4;
  return cfg;
}

struct Group {
  int user = 0;
  int pos = 0;
  std::vector<int> negs;
};

std::vector<Group> group_consecutive(const std::vector<data::Triple>& triples) {
  std::vector<Group> groups;
  for (const auto& t : triples) {
    if (groups.empty() || groups.back().user != t.user ||
        groups.back().pos != t.pos) {
      groups.push_back({t.user, t.pos, {}});
    }
    groups.back().negs.push_back(t.neg);
  }
  return groups;
}

std::unordered_map<std::int64_t, double> train_pair_labels(
    const data::InteractionMatrix& m, const data::SplitAssignment& split,
    int n_items) {
  std::unordered_map<std::int64_t, double> labels;
  for (std::size_t e = 0; e < m.interactions.size(); ++e) {
    if (split.tags[e] != data::Split::train) continue;
    const auto& ev = m.interactions[e];
    labels[static_cast<std::int64_t>(ev.user) * n_items + ev.item] =
        static_cast<double>(ev.label);
  }
  return labels;
}

struct BatchLoss {
  Tensor total;
  Tensor rec;
  Tensor price;
};

// One optimization step's objective over a fixed triple set, assembled the
// same way the training loop does it.
BatchLoss batch_loss(const model::Model& mdl, const graph::Topology& topo,
                     const feat::FeatureBundle& bundle,
                     const std::vector<Group>& groups,
                     const std::unordered_map<std::int64_t, double>& labels,
                     double alpha, double lambda) {
  std::vector<int> pos_b;
  for (const auto& g : groups) pos_b.push_back(g.pos);
  std::sort(pos_b.begin(), pos_b.end());
  pos_b.erase(std::unique(pos_b.begin(), pos_b.end()), pos_b.end());

  const auto prop = model::propagate_all(mdl, topo, bundle);
  const auto slots = fusion::build_keys_values(
      {&prop.item[0], &prop.item[1], &prop.item[2], &prop.item[3]}, pos_b);

  std::unordered_map<int, Tensor> user_emb, item_emb;
  auto user_of = [&](int u) {
    auto it = user_emb.find(u);
    if (it != user_emb.end()) return it->second;
    const Tensor q = fusion::fuse_query(
        {prop.user[0][u], prop.user[1][u], prop.user[2][u], prop.user[3][u]});
    Tensor e_u = fusion::cross_attend(q, slots, mdl.fuse).e_u;
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
  for (const auto& g : groups) {
    const Tensor e_u = user_of(g.user);
    const Tensor e_pos = item_of(g.pos);
    for (const int neg : g.negs) {
      if (!topo.item_active[neg]) continue;
      pos_scores.push_back(heads::rec_score(e_u, e_pos));
      neg_scores.push_back(heads::rec_score(e_u, item_of(neg)));
    }
  }

  BatchLoss out;
  out.rec = heads::bpr_loss(num::concat(pos_scores), num::concat(neg_scores));

  std::vector<Tensor> preds;
  std::vector<double> y;
  for (const auto& g : groups) {
    preds.push_back(heads::price_predict(user_of(g.user), item_of(g.pos),
                                         mdl.price));
    y.push_back(labels.at(static_cast<std::int64_t>(g.user) * topo.n_items +
                          g.pos));
  }
  out.price = heads::bce_loss(num::concat(preds), Tensor::vector(y));
  out.total =
      heads::combined_loss(out.rec, out.price, alpha, lambda,
                           mdl.regularized());
  return out;
}

// ------------------------------------------------------------- criterion 1

void criterion_gradients() {
  const auto t0 = Clock::now();
  const auto toy = toy10(2023);
  const auto topo = graph::build_topology(toy.m, toy.split);
  const auto mcfg = model::config_for_bundle(toy.bundle, 8, 2, 4);
  auto mdl = model::init_model(mcfg, topo.n_users, topo.n_items, 2023);

  const auto triples =
      data::sample_negatives(toy.m, toy.split, derive_seed(2023, "neg", 1));
  const auto groups = group_consecutive(triples);
  const auto labels = train_pair_labels(toy.m, toy.split, topo.n_items);

  auto loss = [&]() {
    return batch_loss(mdl, topo, toy.bundle, groups, labels, 0.2, 0.1).total;
  };

  double worst = 0.0;
  std::string worst_name;
  int checked = 0;
  for (const auto& [name, param] : mdl.named_parameters()) {
    const double err = num::gradient_check(
        [&](const Tensor&) { return loss(); }, param, 1e-4);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
    ++checked;
  }
  const double elapsed = seconds_since(t0);
  report(1, "gradient integrity", worst < 1e-3 && elapsed < 60.0,
         std::to_string(checked) + " tensors, max rel err " + fmt(worst) +
             " at " + worst_name + ", " + fmt(elapsed) + " s");
}

// ------------------------------------------------------------- criterion 2

double recall_brute(const std::vector<int>& ranked, const std::set<int>& rel,
                    int k) {
  int hits = 0;
  for (int r = 0; r < k && r < static_cast<int>(ranked.size()); ++r) {
    hits += rel.count(ranked[r]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

double ndcg_brute(const std::vector<int>& ranked, const std::set<int>& rel,
                  int k) {
  double dcg = 0.0;
  for (int r = 0; r < k && r < static_cast<int>(ranked.size()); ++r) {
    if (rel.count(ranked[r])) dcg += std::log(2.0) / std::log(r + 2.0);
  }
  double idcg = 0.0;
  const int ideal = std::min<int>(k, static_cast<int>(rel.size()));
  for (int r = 0; r < ideal; ++r) idcg += std::log(2.0) / std::log(r + 2.0);
  return idcg == 0.0 ? 0.0 : dcg / idcg;
}

void criterion_metric_oracle() {
  Rng rng(555);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(40));
    std::vector<int> ranked(n);
    for (int i = 0; i < n; ++i) ranked[i] = i;
    rng.shuffle(ranked);
    std::set<int> rel;
    const int n_rel = 1 + static_cast<int>(rng.below(n));
    while (static_cast<int>(rel.size()) < n_rel) {
      rel.insert(static_cast<int>(rng.below(n)));
    }
    const int k = 1 + static_cast<int>(rng.below(n + 5));
    const std::unordered_set<int> rel_u(rel.begin(), rel.end());
    worst = std::max(worst, std::abs(eval::recall_at_k(ranked, rel_u, k) -
                                     recall_brute(ranked, rel, k)));
    worst = std::max(worst, std::abs(eval::ndcg_at_k(ranked, rel_u, k) -
                                     ndcg_brute(ranked, rel, k)));
  }

  const std::vector<int> spot = {7, 8, 9, 4};
  const bool spots_ok =
      std::abs(eval::ndcg_at_k(spot, {7}, 1) - 1.0) < 1e-12 &&
      std::abs(eval::ndcg_at_k(spot, {9}, 3) - 0.5) < 1e-12 &&
      std::abs(eval::ndcg_at_k(spot, {9}, 4) - 0.5) < 1e-12;

  report(2, "metric oracle",
         worst < 1e-9 && spots_ok,
         "1000 instances, max deviation " + fmt(worst) +
             (spots_ok ? ", spot values exact" : ", spot values WRONG"));
}

// ------------------------------------------------------------- criterion 3

void criterion_attention() {
  const auto toy = toy10(2023);
  auto cfg = toy_config();
  cfg.epochs = 3;
  const auto out = training::train(toy.m, toy.split, toy.bundle, cfg);
  const auto topo = graph::build_topology(toy.m, toy.split);
  num::NoGradGuard ng;
  const auto prop = model::propagate_all(out.model, topo, toy.bundle);

  double worst_sum = 0.0;
  for (int u = 0; u < topo.n_users; ++u) {
    const auto fused = model::fuse_user(out.model, prop, u,
                                        topo.user_items[u]);
    double sum = 0.0;
    for (const double w : fused.weights.values()) sum += w;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }

  // four identical slots: one modality's items stand in for all of them
  const auto slots = fusion::build_keys_values(
      {&prop.item[0], &prop.item[0], &prop.item[0], &prop.item[0]},
      topo.user_items[0]);
  const Tensor q = fusion::fuse_query({prop.user[0][0], prop.user[1][0],
                                       prop.user[2][0], prop.user[3][0]});
  const auto even = fusion::cross_attend(q, slots, out.model.fuse);
  double worst_even = 0.0;
  for (const double w : even.weights.values()) {
    worst_even = std::max(worst_even, std::abs(w - 0.25));
  }

  report(3, "attention invariants", worst_sum < 1e-9 && worst_even < 1e-9,
         "weight sum off by " + fmt(worst_sum) +
             ", identical-key weights off 0.25 by " + fmt(worst_even));
}

// ------------------------------------------------------------- criterion 4

bool all_bits_equal(const Tensor& a, const Tensor& b) {
  const auto& av = a.values();
  const auto& bv = b.values();
  if (av.size() != bv.size()) return false;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] != bv[i]) return false;
  }
  return true;
}

void criterion_multitask() {
  const auto toy = toy10(2023);

  auto cfg = toy_config();
  cfg.alpha = 0.0;
  cfg.lambda = 0.0;
  const auto out = training::train(toy.m, toy.split, toy.bundle, cfg);
  const auto mcfg = model::config_for_bundle(toy.bundle, cfg.d, cfg.hops,
                                             cfg.d_k);
  const auto topo = graph::build_topology(toy.m, toy.split);
  const auto reference =
      model::init_model(mcfg, topo.n_users, topo.n_items, cfg.seed);
  const bool frozen =
      all_bits_equal(out.model.price.w1, reference.price.w1) &&
      all_bits_equal(out.model.price.b1, reference.price.b1) &&
      all_bits_equal(out.model.price.w2, reference.price.w2) &&
      all_bits_equal(out.model.price.b2, reference.price.b2);

  // alpha = 1 zeroes the ranking term's coefficient; nothing may flow back
  auto mdl = model::init_model(mcfg, topo.n_users, topo.n_items, 321);
  const auto triples =
      data::sample_negatives(toy.m, toy.split, derive_seed(321, "neg", 1));
  const auto groups = group_consecutive(triples);
  const auto labels = train_pair_labels(toy.m, toy.split, topo.n_items);
  const double alpha_one = 1.0;
  const auto loss = batch_loss(mdl, topo, toy.bundle, groups, labels,
                               alpha_one, 0.0);
  const Tensor ranking_term = num::scalar_mul(loss.rec, 1.0 - alpha_one);
  auto params = mdl.parameters();
  for (auto& p : params) p.zero_grad();
  num::backward(ranking_term);
  bool rank_silent = true;
  for (const auto& p : params) {
    for (const double g : p.grad()) {
      if (g != 0.0) rank_silent = false;
    }
  }

  report(4, "multi-task switch", frozen && rank_silent,
         std::string(frozen ? "price head untouched at alpha=0"
                            : "price head MOVED at alpha=0") +
             (rank_silent ? ", ranking path silent at alpha=1"
                          : ", ranking path LEAKED gradient at alpha=1"));
}

// --------------------------------------------------------- criteria 5 and 6

Instance make_synthetic(std::uint64_t gen_seed) {
  constexpr int kUsers = 200, kItems = 500, kBlocks = 5;
  constexpr int kPerBlock = kItems / kBlocks;
  Rng rng(gen_seed);

  data::TransactionLog log;
  std::int64_t ts = 1;
  for (int u = 0; u < kUsers; ++u) {
    const int home = u % kBlocks;
    std::set<int> bought;
    while (static_cast<int>(bought.size()) < 10) {
      int item;
      if (rng.below(10) < 8) {
        item = home * kPerBlock + static_cast<int>(rng.below(kPerBlock));
      } else {
        item = static_cast<int>(rng.below(kItems));
      }
      if (!bought.insert(item).second) continue;
      data::TransactionRecord r;
      r.collection = "synth";
      char tok[16];
      std::snprintf(tok, sizeof tok, "i%03d", item);
      char wallet[16];
      std::snprintf(wallet, sizeof wallet, "u%03d", u);
      r.token_id = tok;
      r.buyer = wallet;
      r.seller = "s";
      r.price = 1.0 + 0.1 * static_cast<double>(rng.below(20));
      r.currency = "ETH";
      r.timestamp = ts++;
      log.records.push_back(r);
    }
  }

  Instance s;
  s.m = data::build_interactions(log);
  s.split = data::split_interactions(s.m, gen_seed);

  // block-coded item features with noise; every modality carries the signal
  const auto block_of = [&](const std::string& tok) {
    return std::stoi(tok.substr(1)) / kPerBlock;
  };
  s.bundle.image.resize(s.m.items.size());
  s.bundle.text.resize(s.m.items.size());
  s.bundle.price.resize(s.m.items.size());
  s.bundle.transaction.resize(s.m.items.size());
  for (std::size_t i = 0; i < s.m.items.size(); ++i) {
    const int b = block_of(s.m.items[i]);
    auto coded = [&](int width, double scale, double noise) {
      std::vector<double> v(width);
      for (int j = 0; j < width; ++j) {
        v[j] = (j == b ? scale : 0.0) + rng.normal(0.0, noise);
      }
      return v;
    };
    s.bundle.image[i] = coded(8, 1.5, 0.15);
    s.bundle.text[i] = coded(8, 1.0, 0.2);
    s.bundle.price[i] = coded(feat::kTileDim, 0.8, 0.1);
    s.bundle.transaction[i] = coded(feat::kTileDim, 0.6, 0.1);
  }
  s.bundle.user.resize(s.m.users.size());
  for (std::size_t u = 0; u < s.m.users.size(); ++u) {
    const int b = std::stoi(s.m.users[u].substr(1)) % kBlocks;
    s.bundle.user[u] = {0.5 * b - 1.0 + rng.normal(0.0, 0.1),
                        rng.normal(0.0, 0.2), rng.normal(0.0, 0.2)};
  }
  return s;
}

void criteria_synthetic() {
  const auto t0 = Clock::now();
  const std::vector<std::uint64_t> seeds = {2023, 2024, 2025};
  std::vector<double> model_recall, pop_recall;
  bool descent = true;
  std::string descent_detail;

  for (const auto seed : seeds) {
    const auto s = make_synthetic(seed);
    training::TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 50;
    cfg.batch_size = 1024;
    cfg.d = 16;
    cfg.alpha = 0.2;
    cfg.hops = 2;
    cfg.lambda = 0.0;
    cfg.seed = seed;
    cfg.d_k = 8;
    const auto out = training::train(s.m, s.split, s.bundle, cfg);

    if (!(out.trace[9].loss < out.trace[0].loss)) descent = false;
    descent_detail += fmt(out.trace[0].loss) + "->" + fmt(out.trace[9].loss) +
                      " ";

    // score the best-validation checkpoint, the artifact train ships
    const auto topo = graph::build_topology(s.m, s.split);
    const auto mcfg = model::config_for_bundle(s.bundle, cfg.d, cfg.hops,
                                               cfg.d_k);
    auto best = model::init_model(mcfg, topo.n_users, topo.n_items, 1);
    ckpt::restore_parameters(out.best, best.named_parameters());
    num::NoGradGuard ng;
    const auto prop = model::propagate_all(best, topo, s.bundle);
    const auto cs = eval::build_candidates(s.m, s.split, data::Split::test,
                                           derive_seed(seed, "testcand"), 100);
    const auto rep = eval::evaluate_model(best, prop, topo, cs, {10});
    const auto pop = eval::evaluate_popularity(
        cs, data::item_train_counts(s.m, s.split), {10});
    model_recall.push_back(rep.mean_recall[0]);
    pop_recall.push_back(pop.mean_recall[0]);
  }

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double model_med = median(model_recall);
  const double pop_med = median(pop_recall);
  const double elapsed = seconds_since(t0);

  report(5, "synthetic lift",
         model_med >= 1.2 * pop_med && elapsed < 600.0,
         "recall@10 median " + fmt(model_med) + " vs pop " + fmt(pop_med) +
             " (x" + fmt(pop_med > 0 ? model_med / pop_med : 0.0) + "), " +
             fmt(elapsed) + " s");
  report(6, "loss descent", descent,
         "epoch1->epoch10 per seed: " + descent_detail);
}

// ------------------------------------------------------------- criterion 7

void criterion_determinism() {
  const auto toy = toy10(2023);
  const auto cfg = toy_config();
  const auto a = training::train(toy.m, toy.split, toy.bundle, cfg);
  const auto b = training::train(toy.m, toy.split, toy.bundle, cfg);
  const bool identical = ckpt::serialize(a.best) == ckpt::serialize(b.best);

  const auto dir = std::filesystem::temp_directory_path() / "mars_acceptance";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "toy.ckpt").string();
  ckpt::save_checkpoint(a.best, path);
  const auto loaded = ckpt::load_checkpoint(path);

  const auto restored_cfg = training::TrainConfig::from(
      config::KeyValues::parse(loaded.config_text));
  const auto mcfg = model::config_for_bundle(toy.bundle, restored_cfg.d,
                                             restored_cfg.hops,
                                             restored_cfg.d_k);
  const auto topo = graph::build_topology(toy.m, toy.split);
  auto fresh =
      model::init_model(mcfg, topo.n_users, topo.n_items, 999);
  ckpt::restore_parameters(loaded, fresh.named_parameters());

  num::NoGradGuard ng;
  const auto prop = model::propagate_all(fresh, topo, toy.bundle);
  const double replay = eval::mean_recall_for_split(
      fresh, prop, topo, toy.m, toy.split, data::Split::validation,
      derive_seed(cfg.seed, "valcand"), 50);
  const bool exact = replay == a.best_metric;

  report(7, "determinism and persistence", identical && exact,
         std::string(identical ? "checkpoints bit-identical"
                               : "checkpoints DIFFER") +
             ", reloaded metric " + fmt(replay) +
             (exact ? " == " : " != ") + fmt(a.best_metric));
}

// ------------------------------------------------------------- criterion 8

void criterion_pipeline() {
  bool ok = true;
  std::string detail;

  // user filter at threshold 5
  {
    data::TransactionLog log;
    std::int64_t ts = 1;
    const std::vector<std::pair<std::string, int>> buyers = {
        {"keep_a", 6}, {"keep_b", 5}, {"keep_c", 7}, {"drop_d", 4},
        {"drop_e", 1}};
    int tok = 0;
    for (const auto& [buyer, n] : buyers) {
      for (int k = 0; k < n; ++k) {
        data::TransactionRecord r;
        r.collection = "c";
        r.token_id = "t" + std::to_string(tok++ % 9);
        r.buyer = buyer;
        r.seller = "s";
        r.price = 1.0;
        r.currency = "ETH";
        r.timestamp = ts++;
        log.records.push_back(r);
      }
    }
    const auto filtered = data::filter_users(log, 5);
    std::set<std::string> left;
    for (const auto& r : filtered.records) left.insert(r.buyer);
    const bool filter_ok =
        left == std::set<std::string>{"keep_a", "keep_b", "keep_c"} &&
        filtered.records.size() == 18;
    if (!filter_ok) ok = false;
    detail += filter_ok ? "filter ok" : "filter WRONG";
  }

  // price-movement labels on 20 constructed token histories
  {
    const std::vector<std::vector<double>> histories = {
        {1, 2}, {2, 1}, {1, 1}, {1}, {1, 2, 3}, {3, 2, 1}, {1, 3, 2},
        {2, 1, 3}, {1, 1, 2}, {2, 2}, {1, 2, 1, 2}, {5, 4, 4, 6}, {1, 1, 1},
        {2, 3, 3}, {4}, {1, 5, 5, 2, 7}, {3, 3, 4, 2}, {2, 4, 1},
        {6, 6, 6, 7}, {1, 2, 3, 4, 5}};
    data::TransactionLog log;
    std::vector<std::uint8_t> expected;
    std::int64_t ts = 1;
    for (std::size_t step = 0; step < 5; ++step) {
      for (std::size_t h = 0; h < histories.size(); ++h) {
        if (step >= histories[h].size()) continue;
        data::TransactionRecord r;
        r.collection = "c";
        r.token_id = "h" + std::to_string(h);
        r.buyer = "b" + std::to_string((h + step) % 4);
        r.seller = "s";
        r.price = histories[h][step];
        r.currency = "ETH";
        r.timestamp = ts++;
        log.records.push_back(r);
        const bool up = step + 1 < histories[h].size() &&
                        histories[h][step + 1] > histories[h][step];
        expected.push_back(up ? 1 : 0);
      }
    }
    const bool labels_ok = data::compute_price_labels(log) == expected;
    if (!labels_ok) ok = false;
    detail += labels_ok ? ", 20 histories ok" : ", price labels WRONG";
  }

  // exact 40% holdout per user, validation dealt first
  {
    data::TransactionLog log;
    std::int64_t ts = 1;
    for (int n = 5; n <= 12; ++n) {
      for (int j = 0; j < n; ++j) {
        data::TransactionRecord r;
        r.collection = "c";
        r.token_id = "t" + std::to_string((3 * n + j) % 30);
        r.buyer = "u" + std::to_string(n);
        r.seller = "s";
        r.price = 1.0;
        r.currency = "ETH";
        r.timestamp = ts++;
        log.records.push_back(r);
      }
    }
    const auto m = data::build_interactions(log);
    const auto split = data::split_interactions(m, 77);
    bool split_ok = true;
    for (std::size_t u = 0; u < m.users.size(); ++u) {
      int train = 0, val = 0, test = 0;
      for (const int e : m.by_user[u]) {
        switch (split.tags[e]) {
          case data::Split::train: ++train; break;
          case data::Split::validation: ++val; break;
          case data::Split::test: ++test; break;
        }
      }
      const int n = static_cast<int>(m.by_user[u].size());
      const int held = static_cast<int>(std::lround(0.4 * n));
      if (val + test != held || val != (held + 1) / 2 || test != held / 2 ||
          train != n - held || train < 1) {
        split_ok = false;
      }
    }
    if (!split_ok) ok = false;
    detail += split_ok ? ", 40% holdout exact" : ", holdout WRONG";
  }

  report(8, "pipeline fidelity", ok, detail);
}

// ------------------------------------------------------------- criterion 9

void criterion_reproduction() {
  const char* env = std::getenv("MARS_BAYC_DIR");
  const std::filesystem::path dir = env ? env : "data/bayc";
  const auto tx = dir / "transactions.csv";
  const auto img = dir / "image_embeddings.csv";
  const auto txt = dir / "text_embeddings.csv";
  if (!std::filesystem::exists(tx) || !std::filesystem::exists(img) ||
      !std::filesystem::exists(txt)) {
    std::cout << "criterion 9 (reference reproduction): skipped - "
                 "collection data not supplied (set MARS_BAYC_DIR)"
              << std::endl;
    return;
  }

  // the header line "item_id,<dim>" declares the embedding width
  auto header_dim = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return std::stoi(line.substr(line.find(',') + 1));
  };

  try {
    const auto raw = data::load_transactions(tx.string(), "");
    const auto log = data::filter_users(raw, 5);
    const auto m = data::build_interactions(log);
    const auto split = data::split_interactions(m, 2023);

    const auto image =
        feat::load_precomputed_embeddings(img.string(), header_dim(img));
    const auto text =
        feat::load_precomputed_embeddings(txt.string(), header_dim(txt));
    feat::BundleInputs inputs;
    inputs.image = &image;
    inputs.text = &text;
    inputs.image_dim = header_dim(img);
    inputs.text_dim = header_dim(txt);
    const auto bundle = feat::build_feature_bundle(log, m, inputs);

    training::TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 50;
    cfg.batch_size = 1024;
    cfg.d = 128;
    cfg.alpha = 0.2;
    cfg.hops = 2;
    cfg.lambda = 0.1;
    cfg.seed = 2023;
    cfg.d_k = 64;
    const auto out = training::train(m, split, bundle, cfg, &std::cout);

    const auto topo = graph::build_topology(m, split);
    num::NoGradGuard ng;
    const auto prop = model::propagate_all(out.model, topo, bundle);
    const auto cs = eval::build_candidates(m, split, data::Split::test,
                                           derive_seed(2023, "testcand"), 100);
    const auto rep = eval::evaluate_model(out.model, prop, topo, cs, {50});
    const double recall = rep.mean_recall[0];
    const double target = 0.5211;
    std::cout << "criterion 9 (reference reproduction): recall@50 "
              << recall << ", reference " << target << ", deviation "
              << std::abs(recall - target)
              << (std::abs(recall - target) <= 0.10 ? " (within 0.10)"
                                                    : " (outside 0.10)")
              << std::endl;
  } catch (const std::exception& e) {
    std::cout << "criterion 9 (reference reproduction): skipped - "
              << e.what() << std::endl;
  }
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_metric_oracle();
  criterion_attention();
  criterion_multitask();
  criteria_synthetic();
  criterion_determinism();
  criterion_pipeline();
  criterion_reproduction();
  if (g_failures > 0) {
    std::cout << g_failures << " criteria failed" << std::endl;
    return 1;
  }
  std::cout << "all gating criteria passed" << std::endl;
  return 0;
}
