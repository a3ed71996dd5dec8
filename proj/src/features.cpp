#include "mars/features.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mars/csv.hpp"
#include "mars/errors.hpp"

namespace mars::feat {

namespace {

constexpr double kSecondsPerDay = 86400.0;

bool eth_denominated(const std::string& currency) {
  std::string u = currency;
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return u == "ETH" || u == "WETH";
}

double eth_price(const data::TransactionRecord& rec) {
  return eth_denominated(rec.currency) ? rec.price : 0.0;
}

double parse_value(const std::string& s, const std::string& context) {
  double out;
  const char* last = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), last, out);
  if (ec != std::errc() || p != last || !std::isfinite(out)) {
    throw DataError(context + ": bad value '" + s + "'");
  }
  return out;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ItemScalars build_item_scalar_features(const data::TransactionLog& log) {
  ItemScalars out;
  std::unordered_map<std::string, std::vector<const data::TransactionRecord*>>
      by_token;
  for (const auto& rec : log.records) by_token[rec.token_id].push_back(&rec);

  for (const auto& [token, recs] : by_token) {
    double price_sum = 0.0;
    for (const auto* r : recs) price_sum += eth_price(*r);
    out.avg_price[token] = price_sum / static_cast<double>(recs.size());

    double gap_sum = 0.0;
    for (std::size_t i = 1; i < recs.size(); ++i) {
      gap_sum += static_cast<double>(recs[i]->timestamp - recs[i - 1]->timestamp);
    }
    out.avg_holding_days[token] =
        recs.size() > 1
            ? gap_sum / kSecondsPerDay / static_cast<double>(recs.size() - 1)
            : 0.0;
  }
  return out;
}

std::unordered_map<std::string, UserFeatureRow> build_user_features(
    const data::TransactionLog& log) {
  std::int64_t end_ts = 0;
  for (const auto& rec : log.records) end_ts = std::max(end_ts, rec.timestamp);

  // successor sale of the same token, for holding-period lookups
  std::unordered_map<std::string, std::vector<std::size_t>> by_token;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    by_token[log.records[i].token_id].push_back(i);
  }
  std::vector<std::int64_t> next_sale(log.records.size(), -1);
  for (const auto& [token, idxs] : by_token) {
    for (std::size_t t = 0; t + 1 < idxs.size(); ++t) {
      next_sale[idxs[t]] = log.records[idxs[t + 1]].timestamp;
    }
  }

  struct Acc {
    double price_sum = 0.0;
    double hold_sum = 0.0;
    int purchases = 0;
    int events = 0;
  };
  std::unordered_map<std::string, Acc> acc;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& rec = log.records[i];
    auto& a = acc[rec.buyer];
    a.price_sum += eth_price(rec);
    const std::int64_t until = next_sale[i] >= 0 ? next_sale[i] : end_ts;
    a.hold_sum += static_cast<double>(until - rec.timestamp) / kSecondsPerDay;
    ++a.purchases;
    ++a.events;
    ++acc[rec.seller].events;
  }

  std::unordered_map<std::string, UserFeatureRow> out;
  for (const auto& [wallet, a] : acc) {
    if (a.purchases == 0) continue;  // sellers alone are not users
    UserFeatureRow row;
    row.avg_price = a.price_sum / a.purchases;
    row.avg_holding_days = a.hold_sum / a.purchases;
    row.txn_count = static_cast<double>(a.events);
    out[wallet] = row;
  }
  return out;
}

WordVectorStore WordVectorStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  WordVectorStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> vec;
    vec.reserve(kWordDim);
    double v;
    while (ss >> v) vec.push_back(v);
    if (static_cast<int>(vec.size()) != kWordDim) {
      throw DataError("word vectors: line " + std::to_string(lineno) + " has " +
                      std::to_string(vec.size()) + " values, expected " +
                      std::to_string(kWordDim));
    }
    store.put(word, std::move(vec));
  }
  return store;
}

void WordVectorStore::put(const std::string& word, std::vector<double> vec) {
  words_[word] = std::move(vec);
}

const std::vector<double>* WordVectorStore::find(const std::string& word) const {
  auto it = words_.find(word);
  return it == words_.end() ? nullptr : &it->second;
}

std::vector<std::string> select_traits(
    const std::vector<std::string>& items,
    const std::unordered_map<std::string, std::map<std::string, std::string>>&
        traits_by_item,
    int max_traits) {
  std::set<std::string> names;
  for (const auto& [item, traits] : traits_by_item) {
    for (const auto& [name, value] : traits) names.insert(name);
  }
  std::vector<std::pair<int, std::string>> ranked;  // (missing count, name)
  for (const auto& name : names) {
    int missing = 0;
    for (const auto& item : items) {
      auto it = traits_by_item.find(item);
      if (it == traits_by_item.end() || !it->second.count(name)) ++missing;
    }
    ranked.emplace_back(missing, name);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::string> out;
  for (const auto& [missing, name] : ranked) {
    if (static_cast<int>(out.size()) == max_traits) break;
    out.push_back(name);
  }
  return out;
}

std::vector<double> assemble_text_embedding(
    const std::map<std::string, std::string>& traits,
    const WordVectorStore& store,
    const std::vector<std::string>& selected_traits) {
  std::vector<double> out(selected_traits.size() * kWordDim, 0.0);
  for (std::size_t t = 0; t < selected_traits.size(); ++t) {
    auto it = traits.find(selected_traits[t]);
    if (it == traits.end()) continue;  // zero block
    std::istringstream ss(it->second);
    std::string word;
    double* block = out.data() + t * kWordDim;
    while (ss >> word) {
      if (const auto* vec = store.find(word)) {
        for (int i = 0; i < kWordDim; ++i) block[i] += (*vec)[i];
      }
    }
  }
  return out;
}

std::unordered_map<std::string, std::map<std::string, std::string>> load_traits(
    const std::string& path) {
  const auto table = csv::read_file(path);
  const int tok = table.column("token_id");
  const int name = table.column("trait_name");
  const int value = table.column("value");
  if (tok < 0 || name < 0 || value < 0) {
    throw DataError("traits: expected columns token_id,trait_name,value in " +
                    path);
  }
  std::unordered_map<std::string, std::map<std::string, std::string>> out;
  for (const auto& row : table.rows) {
    out[row[tok]][row[name]] = row[value];
  }
  return out;
}

std::vector<double> tile_scalar(double x, int dim) {
  if (!std::isfinite(x)) throw DataError("tile: non-finite value");
  if (dim < 1) throw DataError("tile: dim must be >= 1");
  return std::vector<double>(static_cast<std::size_t>(dim), x);
}

std::vector<double> zscore(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  const double sd = std::sqrt(var);
  std::vector<double> out(xs.size(), 0.0);
  if (sd == 0.0) return out;
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - mean) / sd;
  return out;
}

std::unordered_map<std::string, std::vector<double>> load_precomputed_embeddings(
    const std::string& path, int expected_dim) {
  const auto table = csv::read_file(path, /*header_required=*/false);
  if (table.rows.empty()) throw DataError("embeddings: empty file " + path);
  const auto& head = table.rows.front();
  if (head.size() != 2 || head[0] != "item_id") {
    throw DataError("embeddings: bad header in " + path +
                    " (expected item_id,<dim>)");
  }
  int dim = 0;
  {
    const auto& s = head[1];
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), dim);
    if (ec != std::errc() || p != s.data() + s.size() || dim < 1) {
      throw DataError("embeddings: bad dimension '" + s + "' in " + path);
    }
  }
  if (dim != expected_dim) {
    throw DataError("embeddings: file declares dimension " +
                    std::to_string(dim) + ", expected " +
                    std::to_string(expected_dim));
  }
  std::unordered_map<std::string, std::vector<double>> out;
  for (std::size_t r = 1; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.empty()) continue;
    const std::string& item = row[0];
    if (static_cast<int>(row.size()) != dim + 1) {
      throw DataError("embeddings: item " + item + " has " +
                      std::to_string(row.size() - 1) + " values, expected " +
                      std::to_string(dim));
    }
    if (out.count(item)) {
      throw DataError("embeddings: duplicate item " + item);
    }
    std::vector<double> vec(dim);
    for (int i = 0; i < dim; ++i) {
      vec[i] = parse_value(row[i + 1], "embeddings: item " + item);
    }
    out.emplace(item, std::move(vec));
  }
  return out;
}

void write_embeddings(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  if (rows.empty()) throw DataError("embeddings: nothing to write");
  const auto dim = rows.front().second.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "item_id," << dim << '\n';
  for (const auto& [item, vec] : rows) {
    if (vec.size() != dim) {
      throw DataError("embeddings: inconsistent dimension for " + item);
    }
    out << csv::escape_field(item);
    for (double v : vec) out << ',' << format_value(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

data::ItemPredicate full_feature_predicate(const BundleInputs& inputs) {
  const auto* image = inputs.image;
  const auto* text = inputs.text;
  return [image, text](const std::string& token) {
    if (image && !image->count(token)) return false;
    if (text && !text->count(token)) return false;
    return true;
  };
}

FeatureBundle build_feature_bundle(const data::TransactionLog& log,
                                   const data::InteractionMatrix& m,
                                   const BundleInputs& inputs,
                                   BundleBuildStats* stats) {
  FeatureBundle bundle;
  const auto n_items = m.items.size();

  const auto scalars = build_item_scalar_features(log);
  std::vector<double> prices(n_items), holdings(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    auto p = scalars.avg_price.find(m.items[i]);
    auto h = scalars.avg_holding_days.find(m.items[i]);
    if (p == scalars.avg_price.end() || h == scalars.avg_holding_days.end()) {
      throw DataError("features: item " + m.items[i] + " absent from the log");
    }
    prices[i] = p->second;
    holdings[i] = h->second;
  }
  const auto zprice = zscore(prices);
  const auto zhold = zscore(holdings);
  bundle.price.reserve(n_items);
  bundle.transaction.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    bundle.price.push_back(tile_scalar(zprice[i]));
    bundle.transaction.push_back(tile_scalar(zhold[i]));
  }

  auto fill_modality = [&](const std::unordered_map<
                               std::string, std::vector<double>>* source,
                           int dim, int* missing) {
    std::vector<std::vector<double>> rows;
    rows.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
      if (source) {
        auto it = source->find(m.items[i]);
        if (it != source->end()) {
          if (dim > 0 && static_cast<int>(it->second.size()) != dim) {
            throw DataError("features: item " + m.items[i] +
                            " embedding has wrong dimension");
          }
          rows.push_back(it->second);
          continue;
        }
        if (missing) ++*missing;
      }
      rows.emplace_back(static_cast<std::size_t>(dim), 0.0);
    }
    return rows;
  };

  int image_dim = inputs.image_dim;
  if (image_dim == 0 && inputs.image && !inputs.image->empty()) {
    image_dim = static_cast<int>(inputs.image->begin()->second.size());
  }
  int text_dim = inputs.text_dim;
  if (text_dim == 0 && inputs.text && !inputs.text->empty()) {
    text_dim = static_cast<int>(inputs.text->begin()->second.size());
  }
  if (image_dim <= 0 || text_dim <= 0) {
    throw DataError("features: image/text dimensions must be positive");
  }
  BundleBuildStats local;
  bundle.image = fill_modality(inputs.image, image_dim, &local.missing_image);
  bundle.text = fill_modality(inputs.text, text_dim, &local.missing_text);
  if (stats) *stats = local;

  const auto urows = build_user_features(log);
  std::vector<double> uprice(m.users.size()), uhold(m.users.size()),
      ucount(m.users.size());
  for (std::size_t u = 0; u < m.users.size(); ++u) {
    auto it = urows.find(m.users[u]);
    if (it == urows.end()) {
      throw DataError("features: user " + m.users[u] + " absent from the log");
    }
    uprice[u] = it->second.avg_price;
    uhold[u] = it->second.avg_holding_days;
    ucount[u] = it->second.txn_count;
  }
  const auto zp = zscore(uprice);
  const auto zh = zscore(uhold);
  const auto zc = zscore(ucount);
  bundle.user.reserve(m.users.size());
  for (std::size_t u = 0; u < m.users.size(); ++u) {
    bundle.user.push_back({zp[u], zh[u], zc[u]});
  }

  check_finite(bundle);
  return bundle;
}

void check_finite(const FeatureBundle& bundle) {
  auto scan = [](const std::vector<std::vector<double>>& rows,
                 const char* name) {
    for (const auto& row : rows) {
      for (double v : row) {
        if (!std::isfinite(v)) {
          throw DataError(std::string("features: non-finite value in ") + name);
        }
      }
    }
  };
  scan(bundle.image, "image");
  scan(bundle.text, "text");
  scan(bundle.price, "price");
  scan(bundle.transaction, "transaction");
  scan(bundle.user, "user");
}

}  // namespace mars::feat
