#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "mars/dataset.hpp"
#include "mars/graph.hpp"
#include "mars/model.hpp"

// Top-K evaluation: per-user candidate sets (held-out positives plus
// popularity-sampled negatives), Recall@K / NDCG@K, a popularity baseline,
// and the per-user modality attention report.

namespace mars::eval {

struct CandidateSet {
  std::vector<int> users;  // evaluated user indices
  std::vector<std::vector<int>> positives;   // relevant items per user
  std::vector<std::vector<int>> candidates;  // positives + negatives
  std::vector<char> short_negatives;  // 1 when the pool ran dry below quota
  int skipped_users = 0;      // users with no usable held-out positive
  int dropped_positives = 0;  // held-out positives without training edges
};

// Positives come from `target`-tagged events (test at final evaluation,
// validation during training), restricted to items that hold at least one
// training edge. Negatives are drawn popularity-proportionally from items
// the user never touched in any split, without replacement, deterministic
// per (user, seed).
CandidateSet build_candidates(const data::InteractionMatrix& m,
                              const data::SplitAssignment& split,
                              data::Split target, std::uint64_t seed,
                              int negatives = 100);

// |top-k of ranked ∩ relevant| / |relevant|
double recall_at_k(const std::vector<int>& ranked,
                   const std::unordered_set<int>& relevant, int k);

// Binary relevance, 1-based ranks, hit at rank r contributes 1/log2(r+1);
// the ideal ranking packs all relevant items first.
double ndcg_at_k(const std::vector<int>& ranked,
                 const std::unordered_set<int>& relevant, int k);

// Descending score; equal scores break toward the smaller item id.
std::vector<int> rank_by_score(const std::vector<int>& candidates,
                               const std::vector<double>& scores);

// Descending training popularity with the same tie rule.
std::vector<int> rank_by_popularity(const std::vector<int>& candidates,
                                    const std::vector<double>& train_counts);

struct MetricsReport {
  std::vector<int> ks;
  std::vector<int> users;
  std::vector<std::vector<double>> recall;  // [user][k index]
  std::vector<std::vector<double>> ndcg;
  std::vector<double> mean_recall;
  std::vector<double> mean_ndcg;
  int skipped_users = 0;
  int dropped_positives = 0;
  int short_negative_users = 0;
};

MetricsReport compute_metrics(const CandidateSet& cs,
                              const std::vector<std::vector<int>>& ranked,
                              const std::vector<int>& ks);

// Scores every candidate of every evaluated user with the trained model:
// e_u from the user's training positives, items as their propagated means.
std::vector<std::vector<double>> score_candidates(
    const model::Model& m, const model::Propagated& p,
    const graph::Topology& topo, const CandidateSet& cs);

MetricsReport evaluate_model(const model::Model& m, const model::Propagated& p,
                             const graph::Topology& topo,
                             const CandidateSet& cs,
                             const std::vector<int>& ks);

MetricsReport evaluate_popularity(const CandidateSet& cs,
                                  const std::vector<double>& train_counts,
                                  const std::vector<int>& ks);

// Mean Recall@k of the model over `target`-tagged positives; the training
// loop's per-epoch selection metric.
double mean_recall_for_split(const model::Model& m, const model::Propagated& p,
                             const graph::Topology& topo,
                             const data::InteractionMatrix& mat,
                             const data::SplitAssignment& split,
                             data::Split target, std::uint64_t candidate_seed,
                             int k);

struct AttentionReport {
  std::vector<int> users;
  std::vector<std::array<double, 4>> scores;  // raw, modality order
  std::array<double, 4> mean{};
  std::array<std::array<double, 3>, 4> quartiles{};  // q1, median, q3
};

// Raw pre-softmax attention scores of every user against their own training
// positives; negative values pass through untouched.
AttentionReport attention_report(const model::Model& m,
                                 const model::Propagated& p,
                                 const graph::Topology& topo);

// user,metric,k,value rows, users as wallet ids
void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const data::InteractionMatrix& m);

// user,img_score,txt_score,price_score,txn_score rows
void write_attention_csv(const std::string& path,
                         const AttentionReport& report,
                         const data::InteractionMatrix& m);

}  // namespace mars::eval
