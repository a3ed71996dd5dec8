#include "mars/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "mars/csv.hpp"
#include "mars/errors.hpp"
#include "mars/rng.hpp"

namespace mars::eval {

using num::Tensor;

CandidateSet build_candidates(const data::InteractionMatrix& m,
                              const data::SplitAssignment& split,
                              data::Split target, std::uint64_t seed,
                              int negatives) {
  if (negatives < 0) throw DataError("candidates: negative quota");
  if (split.tags.size() != m.interactions.size()) {
    throw DataError("candidates: split does not match interactions");
  }
  const int n_users = static_cast<int>(m.users.size());
  const int n_items = static_cast<int>(m.items.size());

  const auto counts = data::item_train_counts(m, split);
  std::vector<char> active(n_items, 0);
  for (int i = 0; i < n_items; ++i) active[i] = counts[i] > 0.0 ? 1 : 0;

  // per user: held-out positives under the target tag, and the full set of
  // items ever touched (negatives must avoid all of them)
  std::vector<std::vector<int>> held(n_users), touched(n_users);
  for (std::size_t e = 0; e < m.interactions.size(); ++e) {
    const auto& ev = m.interactions[e];
    touched[ev.user].push_back(ev.item);
    if (split.tags[e] == target) held[ev.user].push_back(ev.item);
  }

  CandidateSet cs;
  for (int u = 0; u < n_users; ++u) {
    auto& pos = held[u];
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    const std::size_t before = pos.size();
    pos.erase(std::remove_if(pos.begin(), pos.end(),
                             [&](int i) { return !active[i]; }),
              pos.end());
    cs.dropped_positives += static_cast<int>(before - pos.size());
    if (pos.empty()) continue;

    auto& all = touched[u];
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    // popularity pool: untouched active items
    std::vector<int> pool;
    std::vector<double> weights;
    pool.reserve(n_items);
    for (int i = 0; i < n_items; ++i) {
      if (!active[i]) continue;
      if (std::binary_search(all.begin(), all.end(), i)) continue;
      pool.push_back(i);
      weights.push_back(counts[i]);
    }

    Rng rng(derive_seed(seed, "cand", static_cast<std::uint64_t>(u)));
    std::vector<int> negs;
    const int want = std::min<int>(negatives, static_cast<int>(pool.size()));
    for (int t = 0; t < want; ++t) {
      const std::size_t pick = sample_weighted(weights, rng);
      negs.push_back(pool[pick]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
    }

    cs.users.push_back(u);
    cs.short_negatives.push_back(want < negatives ? 1 : 0);
    std::vector<int> cand = pos;
    cand.insert(cand.end(), negs.begin(), negs.end());
    cs.positives.push_back(std::move(pos));
    cs.candidates.push_back(std::move(cand));
  }

  cs.skipped_users = n_users - static_cast<int>(cs.users.size());
  return cs;
}

double recall_at_k(const std::vector<int>& ranked,
                   const std::unordered_set<int>& relevant, int k) {
  if (k <= 0) throw DataError("recall: k must be positive");
  if (relevant.empty()) throw DataError("recall: empty relevant set");
  int hits = 0;
  const int top = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < top; ++r) {
    if (relevant.count(ranked[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const std::vector<int>& ranked,
                 const std::unordered_set<int>& relevant, int k) {
  if (k <= 0) throw DataError("ndcg: k must be positive");
  if (relevant.empty()) throw DataError("ndcg: empty relevant set");
  double dcg = 0.0;
  const int top = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 1; r <= top; ++r) {
    if (relevant.count(ranked[r - 1])) {
      dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
  }
  double idcg = 0.0;
  const int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
  for (int r = 1; r <= ideal; ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return dcg / idcg;
}

namespace {

std::vector<int> order_desc(const std::vector<int>& candidates,
                            const std::vector<double>& key) {
  std::vector<int> idx(candidates.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (key[a] != key[b]) return key[a] > key[b];
    return candidates[a] < candidates[b];
  });
  std::vector<int> out(candidates.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = candidates[idx[i]];
  return out;
}

}  // namespace

std::vector<int> rank_by_score(const std::vector<int>& candidates,
                               const std::vector<double>& scores) {
  if (candidates.size() != scores.size()) {
    throw DataError("rank: candidate and score counts differ");
  }
  return order_desc(candidates, scores);
}

std::vector<int> rank_by_popularity(const std::vector<int>& candidates,
                                    const std::vector<double>& train_counts) {
  std::vector<double> key(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    key[i] = train_counts[candidates[i]];
  }
  return order_desc(candidates, key);
}

MetricsReport compute_metrics(const CandidateSet& cs,
                              const std::vector<std::vector<int>>& ranked,
                              const std::vector<int>& ks) {
  if (ranked.size() != cs.users.size()) {
    throw DataError("metrics: one ranking per evaluated user required");
  }
  MetricsReport out;
  out.ks = ks;
  out.users = cs.users;
  out.skipped_users = cs.skipped_users;
  out.dropped_positives = cs.dropped_positives;
  for (char flag : cs.short_negatives) out.short_negative_users += flag;
  out.mean_recall.assign(ks.size(), 0.0);
  out.mean_ndcg.assign(ks.size(), 0.0);
  for (std::size_t s = 0; s < cs.users.size(); ++s) {
    std::unordered_set<int> relevant(cs.positives[s].begin(),
                                     cs.positives[s].end());
    std::vector<double> rrow, nrow;
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const double r = recall_at_k(ranked[s], relevant, ks[ki]);
      const double n = ndcg_at_k(ranked[s], relevant, ks[ki]);
      rrow.push_back(r);
      nrow.push_back(n);
      out.mean_recall[ki] += r;
      out.mean_ndcg[ki] += n;
    }
    out.recall.push_back(std::move(rrow));
    out.ndcg.push_back(std::move(nrow));
  }
  if (!cs.users.empty()) {
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      out.mean_recall[ki] /= static_cast<double>(cs.users.size());
      out.mean_ndcg[ki] /= static_cast<double>(cs.users.size());
    }
  }
  return out;
}

std::vector<std::vector<double>> score_candidates(
    const model::Model& m, const model::Propagated& p,
    const graph::Topology& topo, const CandidateSet& cs) {
  num::NoGradGuard ng;
  std::vector<std::vector<double>> out;
  out.reserve(cs.users.size());
  for (std::size_t s = 0; s < cs.users.size(); ++s) {
    const int u = cs.users[s];
    const auto fused = model::fuse_user(m, p, u, topo.user_items[u]);
    std::vector<double> scores;
    scores.reserve(cs.candidates[s].size());
    for (int i : cs.candidates[s]) {
      const Tensor e_i = model::item_embedding(p, i);
      scores.push_back(heads::rec_score(fused.e_u, e_i).item());
    }
    out.push_back(std::move(scores));
  }
  return out;
}

MetricsReport evaluate_model(const model::Model& m, const model::Propagated& p,
                             const graph::Topology& topo,
                             const CandidateSet& cs,
                             const std::vector<int>& ks) {
  const auto scores = score_candidates(m, p, topo, cs);
  std::vector<std::vector<int>> ranked;
  ranked.reserve(cs.users.size());
  for (std::size_t s = 0; s < cs.users.size(); ++s) {
    ranked.push_back(rank_by_score(cs.candidates[s], scores[s]));
  }
  return compute_metrics(cs, ranked, ks);
}

MetricsReport evaluate_popularity(const CandidateSet& cs,
                                  const std::vector<double>& train_counts,
                                  const std::vector<int>& ks) {
  std::vector<std::vector<int>> ranked;
  ranked.reserve(cs.users.size());
  for (std::size_t s = 0; s < cs.users.size(); ++s) {
    ranked.push_back(rank_by_popularity(cs.candidates[s], train_counts));
  }
  return compute_metrics(cs, ranked, ks);
}

double mean_recall_for_split(const model::Model& m, const model::Propagated& p,
                             const graph::Topology& topo,
                             const data::InteractionMatrix& mat,
                             const data::SplitAssignment& split,
                             data::Split target, std::uint64_t candidate_seed,
                             int k) {
  const auto cs = build_candidates(mat, split, target, candidate_seed);
  if (cs.users.empty()) return 0.0;
  const auto report = evaluate_model(m, p, topo, cs, {k});
  return report.mean_recall[0];
}

namespace {

std::array<double, 3> quartiles_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  auto at = [&](double q) {
    // linear interpolation between closest ranks
    const double pos = q * (static_cast<double>(xs.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
  };
  return {at(0.25), at(0.5), at(0.75)};
}

}  // namespace

AttentionReport attention_report(const model::Model& m,
                                 const model::Propagated& p,
                                 const graph::Topology& topo) {
  num::NoGradGuard ng;
  AttentionReport out;
  for (int u = 0; u < topo.n_users; ++u) {
    const auto fused = model::fuse_user(m, p, u, topo.user_items[u]);
    std::array<double, 4> row{};
    for (int mod = 0; mod < 4; ++mod) row[mod] = fused.scores[mod];
    out.users.push_back(u);
    out.scores.push_back(row);
  }
  for (int mod = 0; mod < 4; ++mod) {
    std::vector<double> col;
    col.reserve(out.scores.size());
    for (const auto& row : out.scores) col.push_back(row[mod]);
    double sum = 0.0;
    for (double v : col) sum += v;
    out.mean[mod] = col.empty() ? 0.0 : sum / static_cast<double>(col.size());
    if (!col.empty()) out.quartiles[mod] = quartiles_of(std::move(col));
  }
  return out;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const data::InteractionMatrix& m) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < report.users.size(); ++s) {
    const std::string& wallet = m.users[report.users[s]];
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
      rows.push_back({wallet, "recall", std::to_string(report.ks[ki]),
                      std::to_string(report.recall[s][ki])});
      rows.push_back({wallet, "ndcg", std::to_string(report.ks[ki]),
                      std::to_string(report.ndcg[s][ki])});
    }
  }
  csv::write_file(path, {"user", "metric", "k", "value"}, rows);
}

void write_attention_csv(const std::string& path,
                         const AttentionReport& report,
                         const data::InteractionMatrix& m) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < report.users.size(); ++s) {
    std::vector<std::string> row = {m.users[report.users[s]]};
    for (int mod = 0; mod < 4; ++mod) {
      row.push_back(std::to_string(report.scores[s][mod]));
    }
    rows.push_back(std::move(row));
  }
  csv::write_file(path,
                  {"user", "img_score", "txt_score", "price_score",
                   "txn_score"},
                  rows);
}

}  // namespace mars::eval
