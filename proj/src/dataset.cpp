#include "mars/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "mars/csv.hpp"
#include "mars/errors.hpp"
#include "mars/rng.hpp"

namespace mars::data {

namespace {

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [p, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && p == last && std::isfinite(out);
}

bool parse_i64(const std::string& s, std::int64_t& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [p, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && p == last;
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

bool is_eth_denominated(const std::string& currency) {
  const std::string u = upper(currency);
  return u == "ETH" || u == "WETH";
}

std::optional<double> loglog_slope(const std::map<std::int64_t, std::int64_t>& hist) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& [degree, freq] : hist) {
    if (freq > 0) {
      pts.emplace_back(std::log(static_cast<double>(degree)),
                       std::log(static_cast<double>(freq)));
    }
  }
  if (pts.size() < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0, sxy = 0;
  for (auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

}  // namespace

TransactionLog load_transactions(const std::string& path,
                                 const std::string& collection) {
  const auto table = csv::read_file(path);
  const char* names[] = {"collection", "token_id", "buyer", "seller",
                         "price",      "currency", "timestamp"};
  int col[7];
  for (int i = 0; i < 7; ++i) {
    col[i] = table.column(names[i]);
    if (col[i] < 0) {
      throw DataError("transactions: missing column '" + std::string(names[i]) +
                      "' in " + path);
    }
  }

  TransactionLog log;
  log.collection = collection;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = std::to_string(table.row_lines[r]);
    TransactionRecord rec;
    rec.collection = row[col[0]];
    if (!collection.empty() && rec.collection != collection) continue;
    rec.token_id = row[col[1]];
    rec.buyer = row[col[2]];
    rec.seller = row[col[3]];
    rec.currency = row[col[5]];
    if (rec.token_id.empty() || rec.buyer.empty() || rec.seller.empty() ||
        rec.currency.empty()) {
      throw DataError("transactions: line " + line + ": missing field");
    }
    if (rec.buyer == rec.seller) {
      throw DataError("transactions: line " + line + ": buyer equals seller");
    }
    if (!parse_double(row[col[4]], rec.price) || rec.price < 0.0) {
      throw DataError("transactions: line " + line + ": bad price '" +
                      row[col[4]] + "'");
    }
    if (!parse_i64(row[col[6]], rec.timestamp) || rec.timestamp <= 0) {
      throw DataError("transactions: line " + line + ": bad timestamp '" +
                      row[col[6]] + "'");
    }
    log.records.push_back(std::move(rec));
  }
  if (log.records.empty()) {
    throw DataError("transactions: no records" +
                    (collection.empty() ? std::string()
                                        : " for collection " + collection) +
                    " in " + path);
  }
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const auto& a, const auto& b) {
                     return a.timestamp < b.timestamp;
                   });
  return log;
}

TransactionLog filter_users(const TransactionLog& log, int min_interactions,
                            const ItemPredicate& item_ok) {
  if (min_interactions < 1) {
    throw DataError("filter: min_interactions must be >= 1");
  }
  TransactionLog out;
  out.collection = log.collection;

  std::vector<const TransactionRecord*> kept;
  kept.reserve(log.records.size());
  for (const auto& rec : log.records) {
    if (item_ok && !item_ok(rec.token_id)) continue;
    kept.push_back(&rec);
  }

  std::unordered_map<std::string, int> purchases;
  for (const auto* rec : kept) ++purchases[rec->buyer];

  for (const auto* rec : kept) {
    if (purchases[rec->buyer] >= min_interactions) out.records.push_back(*rec);
  }
  if (out.records.empty()) {
    throw DataError("filter: no users survive the threshold of " +
                    std::to_string(min_interactions));
  }
  return out;
}

std::vector<std::uint8_t> compute_price_labels(const TransactionLog& log) {
  std::vector<std::uint8_t> labels(log.records.size(), 0);
  std::unordered_map<std::string, std::vector<std::size_t>> by_token;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    by_token[log.records[i].token_id].push_back(i);
  }
  for (const auto& [token, idxs] : by_token) {
    for (std::size_t t = 0; t + 1 < idxs.size(); ++t) {
      labels[idxs[t]] =
          log.records[idxs[t + 1]].price > log.records[idxs[t]].price ? 1 : 0;
    }
  }
  return labels;
}

InteractionMatrix build_interactions(const TransactionLog& log) {
  if (log.records.empty()) throw DataError("interactions: empty log");
  InteractionMatrix m;

  std::set<std::string> users, items;
  for (const auto& rec : log.records) {
    users.insert(rec.buyer);
    items.insert(rec.token_id);
  }
  m.users.assign(users.begin(), users.end());
  m.items.assign(items.begin(), items.end());
  for (std::size_t i = 0; i < m.users.size(); ++i)
    m.user_index[m.users[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < m.items.size(); ++i)
    m.item_index[m.items[i]] = static_cast<int>(i);

  const auto labels = compute_price_labels(log);
  m.by_user.resize(m.users.size());
  m.interactions.reserve(log.records.size());
  for (std::size_t r = 0; r < log.records.size(); ++r) {
    const auto& rec = log.records[r];
    Interaction ev;
    ev.user = m.user_index[rec.buyer];
    ev.item = m.item_index[rec.token_id];
    ev.timestamp = rec.timestamp;
    ev.price_eth = is_eth_denominated(rec.currency) ? rec.price : 0.0;
    ev.label = labels[r];
    m.by_user[ev.user].push_back(static_cast<int>(m.interactions.size()));
    m.interactions.push_back(ev);
    m.end_timestamp = std::max(m.end_timestamp, rec.timestamp);
  }
  return m;
}

SplitAssignment split_interactions(const InteractionMatrix& m,
                                   std::uint64_t seed) {
  SplitAssignment split;
  split.tags.assign(m.interactions.size(), Split::train);
  for (std::size_t u = 0; u < m.users.size(); ++u) {
    const auto& events = m.by_user[u];
    const auto n = static_cast<std::int64_t>(events.size());
    if (n < 5) {
      throw DataError("split: user " + m.users[u] + " has only " +
                      std::to_string(n) + " interactions (expected >= 5)");
    }
    const auto held = std::lround(0.4 * static_cast<double>(n));
    if (n - held < 1) {
      throw DataError("split: user " + m.users[u] +
                      " would keep no training interactions");
    }
    std::vector<int> pool = events;
    Rng rng(derive_seed(seed, "split", u));
    rng.shuffle(pool);
    for (std::int64_t t = 0; t < held; ++t) {
      // validation first, so odd pools give validation the extra event
      split.tags[pool[t]] = (t % 2 == 0) ? Split::validation : Split::test;
    }
  }
  return split;
}

void write_split_csv(const std::string& path, const InteractionMatrix& m,
                     const SplitAssignment& split) {
  static const char* names[] = {"train", "validation", "test"};
  std::vector<std::vector<std::string>> rows;
  rows.reserve(m.interactions.size());
  for (std::size_t i = 0; i < m.interactions.size(); ++i) {
    const auto& ev = m.interactions[i];
    rows.push_back({m.users[ev.user], m.items[ev.item],
                    std::to_string(ev.timestamp),
                    names[static_cast<int>(split.tags[i])]});
  }
  csv::write_file(path, {"user", "item", "timestamp", "split"}, rows);
}

std::vector<double> item_train_counts(const InteractionMatrix& m,
                                      const SplitAssignment& split) {
  std::vector<double> counts(m.items.size(), 0.0);
  for (std::size_t i = 0; i < m.interactions.size(); ++i) {
    if (split.tags[i] == Split::train) counts[m.interactions[i].item] += 1.0;
  }
  return counts;
}

std::vector<Triple> sample_negatives(const InteractionMatrix& m,
                                     const SplitAssignment& split,
                                     std::uint64_t seed) {
  const auto counts = item_train_counts(m, split);
  Rng rng(derive_seed(seed, "negatives"));
  std::vector<Triple> triples;

  for (std::size_t u = 0; u < m.users.size(); ++u) {
    std::unordered_set<int> interacted;
    std::set<int> train_items;
    for (int ev : m.by_user[u]) {
      interacted.insert(m.interactions[ev].item);
      if (split.tags[ev] == Split::train) {
        train_items.insert(m.interactions[ev].item);
      }
    }
    if (train_items.empty()) continue;

    std::vector<int> candidates;
    std::vector<double> weights;
    candidates.reserve(m.items.size() - interacted.size());
    for (int i = 0; i < static_cast<int>(m.items.size()); ++i) {
      if (!interacted.count(i)) {
        candidates.push_back(i);
        weights.push_back(counts[i]);
      }
    }
    if (candidates.empty()) {
      throw DataError("negatives: user " + m.users[u] +
                      " has interacted with every item");
    }
    if (candidates.size() < 5) {
      throw DataError("negatives: user " + m.users[u] + " has only " +
                      std::to_string(candidates.size()) +
                      " candidate items, cannot draw 5 without replacement");
    }

    for (int pos : train_items) {
      auto cand = candidates;
      auto w = weights;
      for (int t = 0; t < 5; ++t) {
        const auto k = sample_weighted(w, rng);
        triples.push_back({static_cast<int>(u), pos, cand[k]});
        cand[k] = cand.back();
        cand.pop_back();
        w[k] = w.back();
        w.pop_back();
      }
    }
  }
  if (triples.empty()) throw DataError("negatives: empty training split");
  return triples;
}

PowerLawReport power_law_report(const InteractionMatrix& m) {
  if (m.interactions.empty()) throw DataError("power law: empty matrix");
  std::vector<std::int64_t> item_deg(m.items.size(), 0);
  std::vector<std::int64_t> user_deg(m.users.size(), 0);
  for (const auto& ev : m.interactions) {
    ++item_deg[ev.item];
    ++user_deg[ev.user];
  }
  std::map<std::int64_t, std::int64_t> item_hist, user_hist;
  for (auto d : item_deg)
    if (d > 0) ++item_hist[d];
  for (auto d : user_deg)
    if (d > 0) ++user_hist[d];

  PowerLawReport report;
  std::set<std::int64_t> degrees;
  for (auto& [d, _] : item_hist) degrees.insert(d);
  for (auto& [d, _] : user_hist) degrees.insert(d);
  for (auto d : degrees) {
    DegreeBin bin;
    bin.degree = d;
    if (auto it = item_hist.find(d); it != item_hist.end()) bin.items = it->second;
    if (auto it = user_hist.find(d); it != user_hist.end()) bin.users = it->second;
    report.bins.push_back(bin);
  }
  report.item_slope = loglog_slope(item_hist);
  report.user_slope = loglog_slope(user_hist);
  return report;
}

}  // namespace mars::data
