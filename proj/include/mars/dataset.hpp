#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

// Raw purchase log -> filtered interaction matrix, price-movement labels,
// per-user train/validation/test split, and popularity negative sampling.
// A buyer wallet is a user; seller-side events never create interactions.

namespace mars::data {

struct TransactionRecord {
  std::string collection;
  std::string token_id;
  std::string buyer;
  std::string seller;
  double price = 0.0;
  std::string currency;
  std::int64_t timestamp = 0;
};

struct TransactionLog {
  std::string collection;
  std::vector<TransactionRecord> records;  // chronological, ties in file order
};

// Reads the export CSV (schema: collection,token_id,buyer,seller,price,
// currency,timestamp) keeping rows of the named collection; empty name keeps
// everything. Malformed rows raise DataError naming the source line.
TransactionLog load_transactions(const std::string& path,
                                 const std::string& collection = "");

using ItemPredicate = std::function<bool(const std::string& token_id)>;

// Drops items rejected by item_ok, then buyers with fewer than
// min_interactions purchases. One pass, not iterated to a fixpoint.
TransactionLog filter_users(const TransactionLog& log,
                            int min_interactions = 5,
                            const ItemPredicate& item_ok = {});

// Per record: 1 iff the same token's next sale has a strictly higher price,
// 0 otherwise (including final sales and equal prices). Aligned with
// log.records.
std::vector<std::uint8_t> compute_price_labels(const TransactionLog& log);

struct Interaction {
  int user = 0;
  int item = 0;
  std::int64_t timestamp = 0;
  double price_eth = 0.0;  // 0 for non-ETH/WETH sales
  std::uint8_t label = 0;  // price-movement label of this purchase event
};

struct InteractionMatrix {
  std::vector<std::string> users;  // sorted wallet ids
  std::vector<std::string> items;  // sorted token ids
  std::vector<Interaction> interactions;  // chronological purchase events
  std::vector<std::vector<int>> by_user;  // event indices per user

  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> item_index;

  std::int64_t end_timestamp = 0;  // dataset end, used for open holdings
};

InteractionMatrix build_interactions(const TransactionLog& log);

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

struct SplitAssignment {
  std::vector<Split> tags;  // parallel to InteractionMatrix::interactions
};

// Holds out round(0.4*n) of each user's events after a seeded shuffle and
// deals them validation first, then alternating. Users keep at least one
// training event.
SplitAssignment split_interactions(const InteractionMatrix& m,
                                   std::uint64_t seed);

void write_split_csv(const std::string& path, const InteractionMatrix& m,
                     const SplitAssignment& split);

struct Triple {
  int user = 0;
  int pos = 0;
  int neg = 0;
};

// Training event count per item; the popularity weights used everywhere.
std::vector<double> item_train_counts(const InteractionMatrix& m,
                                      const SplitAssignment& split);

// One epoch of BPR triples: every distinct training (u,i) pair yields 5
// negatives drawn popularity-proportionally without replacement, never
// items the user interacted with in any split.
std::vector<Triple> sample_negatives(const InteractionMatrix& m,
                                     const SplitAssignment& split,
                                     std::uint64_t seed);

struct DegreeBin {
  std::int64_t degree = 0;
  std::int64_t items = 0;
  std::int64_t users = 0;
};

struct PowerLawReport {
  std::vector<DegreeBin> bins;  // ascending degree
  std::optional<double> item_slope;  // log-log least squares, absent when
  std::optional<double> user_slope;  // fewer than 2 nonzero bins
};

PowerLawReport power_law_report(const InteractionMatrix& m);

}  // namespace mars::data
