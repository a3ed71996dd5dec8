#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_set>

#include "mars/csv.hpp"
#include "mars/dataset.hpp"
#include "mars/errors.hpp"
#include "mars/rng.hpp"

using namespace mars;
using namespace mars::data;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path.string();
}

TransactionRecord rec(const std::string& token, const std::string& buyer,
                      double price, std::int64_t ts,
                      const std::string& currency = "ETH",
                      const std::string& seller = "0xseller") {
  TransactionRecord r;
  r.collection = "c";
  r.token_id = token;
  r.buyer = buyer;
  r.seller = seller;
  r.price = price;
  r.currency = currency;
  r.timestamp = ts;
  return r;
}

// n distinct purchases for one buyer, tokens named prefix0..prefix(n-1)
void add_purchases(TransactionLog& log, const std::string& buyer, int n,
                   const std::string& prefix, std::int64_t t0 = 1000) {
  for (int i = 0; i < n; ++i) {
    log.records.push_back(rec(prefix + std::to_string(i), buyer, 1.0, t0 + i));
  }
}

}  // namespace

TEST_CASE("csv parsing handles quoting, escapes and embedded delimiters") {
  auto t = csv::parse("a,b,c\n1,\"x,y\",\"he said \"\"hi\"\"\"\n2,,z\r\n");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[0][2] == "he said \"hi\"");
  CHECK(t.rows[1][1] == "");
  CHECK(t.row_lines[0] == 2);
  CHECK(t.column("b") == 1);
  CHECK(t.column("missing") == -1);
}

TEST_CASE("csv rejects malformed input with line positions") {
  CHECK_THROWS_AS(csv::parse("a,b\n1,\"unterminated\n"), DataError);
  CHECK_THROWS_AS(csv::parse("a,b\n1,2,3\n"), DataError);
  CHECK_THROWS_AS(csv::parse("a,b\nx\"y,2\n"), DataError);
  CHECK_THROWS_AS(csv::parse(""), DataError);
}

TEST_CASE("csv writer round-trips awkward fields") {
  auto path = write_temp("mars_csv_rt.csv", "");
  std::vector<std::vector<std::string>> rows = {
      {"plain", "with,comma", "with\"quote"}, {"a\nb", "", "z"}};
  csv::write_file(path, {"x", "y", "z"}, rows);
  auto t = csv::read_file(path);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows == rows);
  std::remove(path.c_str());
}

TEST_CASE("transaction loading sorts records and filters by collection") {
  auto path = write_temp("mars_tx1.csv",
                         "collection,token_id,buyer,seller,price,currency,timestamp\n"
                         "c,t2,u1,s1,2.0,ETH,300\n"
                         "c,t1,u1,s1,1.0,ETH,100\n"
                         "other,t9,u9,s9,9.0,ETH,50\n"
                         "c,t3,u2,s1,3.0,WETH,200\n");
  auto log = load_transactions(path, "c");
  REQUIRE(log.records.size() == 3);
  CHECK(log.records[0].token_id == "t1");
  CHECK(log.records[1].token_id == "t3");
  CHECK(log.records[2].token_id == "t2");

  auto all = load_transactions(path);
  CHECK(all.records.size() == 4);
  std::remove(path.c_str());
}

TEST_CASE("transaction loading rejects bad rows by line number") {
  auto path = write_temp("mars_tx2.csv",
                         "collection,token_id,buyer,seller,price,currency,timestamp\n"
                         "c,t1,u1,s1,1.0,ETH,100\n"
                         "c,t2,u1,s1,-2.0,ETH,200\n");
  try {
    load_transactions(path, "c");
    FAIL("expected rejection");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::remove(path.c_str());

  auto self = write_temp("mars_tx3.csv",
                         "collection,token_id,buyer,seller,price,currency,timestamp\n"
                         "c,t1,same,same,1.0,ETH,100\n");
  CHECK_THROWS_AS(load_transactions(self, "c"), DataError);
  std::remove(self.c_str());

  auto empty = write_temp("mars_tx4.csv",
                          "collection,token_id,buyer,seller,price,currency,timestamp\n");
  CHECK_THROWS_AS(load_transactions(empty, "c"), DataError);
  std::remove(empty.c_str());

  auto badcol = write_temp("mars_tx5.csv", "a,b\n1,2\n");
  CHECK_THROWS_AS(load_transactions(badcol, "c"), DataError);
  std::remove(badcol.c_str());
}

TEST_CASE("user filtering enforces the purchase threshold") {
  TransactionLog log;
  log.collection = "c";
  for (int n = 1; n <= 10; ++n) {
    add_purchases(log, "u" + std::to_string(n), n, "t" + std::to_string(n) + "_");
  }
  auto filtered = filter_users(log, 5);
  std::set<std::string> buyers;
  for (const auto& r : filtered.records) buyers.insert(r.buyer);
  CHECK(buyers.size() == 6);  // counts 5..10 survive
  CHECK(buyers.count("u4") == 0);
  CHECK(buyers.count("u5") == 1);

  // applying the filter to its own output changes nothing
  auto twice = filter_users(filtered, 5);
  CHECK(twice.records.size() == filtered.records.size());

  CHECK_THROWS_AS(filter_users(log, 100), DataError);
  CHECK_THROWS_AS(filter_users(log, 0), DataError);
}

TEST_CASE("items without full features are dropped before user counting") {
  TransactionLog log;
  log.collection = "c";
  // u1 has 5 purchases but one is of an item that lacks features
  add_purchases(log, "u1", 5, "good");
  log.records[4].token_id = "bad0";
  add_purchases(log, "u2", 5, "extra", 2000);
  auto filtered = filter_users(log, 5, [](const std::string& t) {
    return t.rfind("bad", 0) != 0;
  });
  std::set<std::string> buyers;
  for (const auto& r : filtered.records) buyers.insert(r.buyer);
  CHECK(buyers == std::set<std::string>{"u2"});
}

TEST_CASE("price labels mark strictly rising next sales") {
  TransactionLog log;
  log.collection = "c";
  log.records.push_back(rec("t", "u1", 1.0, 100));
  log.records.push_back(rec("t", "u2", 1.5, 200));
  log.records.push_back(rec("t", "u3", 1.2, 300));
  auto labels = compute_price_labels(log);
  CHECK(labels == std::vector<std::uint8_t>{1, 0, 0});

  TransactionLog single;
  single.records.push_back(rec("t", "u1", 5.0, 100));
  CHECK(compute_price_labels(single) == std::vector<std::uint8_t>{0});

  TransactionLog flat;
  flat.records.push_back(rec("t", "u1", 2.0, 100));
  flat.records.push_back(rec("t", "u2", 2.0, 200));
  CHECK(compute_price_labels(flat) == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("label count equals event count across interleaved tokens") {
  TransactionLog log;
  log.records.push_back(rec("a", "u1", 1.0, 100));
  log.records.push_back(rec("b", "u2", 9.0, 150));
  log.records.push_back(rec("a", "u3", 2.0, 200));
  log.records.push_back(rec("b", "u4", 1.0, 250));
  auto labels = compute_price_labels(log);
  REQUIRE(labels.size() == 4);
  CHECK(labels[0] == 1);  // a: 1.0 -> 2.0
  CHECK(labels[1] == 0);  // b: 9.0 -> 1.0
  CHECK(labels[2] == 0);
  CHECK(labels[3] == 0);
}

TEST_CASE("interaction matrix indexes users and items and keeps eth prices") {
  TransactionLog log;
  log.records.push_back(rec("t1", "u1", 2.0, 100, "ETH"));
  log.records.push_back(rec("t2", "u1", 4.0, 200, "USDC"));
  log.records.push_back(rec("t1", "u2", 3.0, 300, "WETH"));
  auto m = build_interactions(log);
  CHECK(m.users == std::vector<std::string>{"u1", "u2"});
  CHECK(m.items == std::vector<std::string>{"t1", "t2"});
  REQUIRE(m.interactions.size() == 3);
  CHECK(m.interactions[0].price_eth == 2.0);
  CHECK(m.interactions[1].price_eth == 0.0);  // USDC zeroed
  CHECK(m.interactions[2].price_eth == 3.0);
  CHECK(m.end_timestamp == 300);
  CHECK(m.by_user[0].size() == 2);
  CHECK(m.interactions[0].label == 1);  // t1: 2.0 -> 3.0
}

TEST_CASE("splits hold out forty percent per user, validation first") {
  TransactionLog log;
  add_purchases(log, "u10", 10, "a");
  add_purchases(log, "u5", 5, "b", 5000);
  auto m = build_interactions(log);
  auto split = split_interactions(m, 7);

  auto count = [&](const std::string& user, Split tag) {
    int c = 0;
    int u = m.user_index.at(user);
    for (int ev : m.by_user[u])
      if (split.tags[ev] == tag) ++c;
    return c;
  };
  CHECK(count("u10", Split::train) == 6);
  CHECK(count("u10", Split::validation) == 2);
  CHECK(count("u10", Split::test) == 2);
  // round(0.4*5) = 2 held out, odd pool rule is moot, alternation gives 1/1
  CHECK(count("u5", Split::train) == 3);
  CHECK(count("u5", Split::validation) == 1);
  CHECK(count("u5", Split::test) == 1);

  // per-user tag counts always sum to the user's event count
  for (std::size_t u = 0; u < m.users.size(); ++u) {
    int total = 0;
    for (auto tag : {Split::train, Split::validation, Split::test})
      total += count(m.users[u], tag);
    CHECK(total == static_cast<int>(m.by_user[u].size()));
  }
}

TEST_CASE("odd held-out pools give validation the extra event") {
  TransactionLog log;
  add_purchases(log, "u", 13, "t");  // round(5.2) = 5 -> 3 validation, 2 test
  auto m = build_interactions(log);
  auto split = split_interactions(m, 3);
  int val = 0, test = 0;
  for (auto t : split.tags) {
    val += t == Split::validation;
    test += t == Split::test;
  }
  CHECK(val == 3);
  CHECK(test == 2);
}

TEST_CASE("splitting is deterministic in the seed and varies across seeds") {
  TransactionLog log;
  for (int u = 0; u < 8; ++u) add_purchases(log, "u" + std::to_string(u), 9, "t", 100 + u);
  auto m = build_interactions(log);
  auto a = split_interactions(m, 42);
  auto b = split_interactions(m, 42);
  CHECK(a.tags == b.tags);
  auto c = split_interactions(m, 43);
  CHECK(a.tags != c.tags);
}

TEST_CASE("split rejects users below five interactions") {
  TransactionLog log;
  add_purchases(log, "u", 4, "t");
  auto m = build_interactions(log);
  CHECK_THROWS_AS(split_interactions(m, 1), DataError);
}

TEST_CASE("split export writes one row per event") {
  TransactionLog log;
  add_purchases(log, "u", 5, "t");
  auto m = build_interactions(log);
  auto split = split_interactions(m, 9);
  auto path = (std::filesystem::temp_directory_path() / "mars_split.csv").string();
  write_split_csv(path, m, split);
  auto t = csv::read_file(path);
  CHECK(t.header == std::vector<std::string>{"user", "item", "timestamp", "split"});
  CHECK(t.rows.size() == 5);
  int train = 0;
  for (auto& row : t.rows) train += row[3] == "train";
  CHECK(train == 3);
  std::remove(path.c_str());
}

TEST_CASE("negative triples avoid the user's items and come five per positive") {
  TransactionLog log;
  // two buyers over a 12-item universe
  add_purchases(log, "u1", 5, "a");
  add_purchases(log, "u2", 7, "b", 2000);
  auto m = build_interactions(log);
  auto split = split_interactions(m, 5);
  auto triples = sample_negatives(m, split, 11);

  std::map<std::pair<int, int>, int> per_positive;
  for (const auto& t : triples) {
    ++per_positive[{t.user, t.pos}];
    // never an interacted item, in any split
    for (int ev : m.by_user[t.user]) CHECK(m.interactions[ev].item != t.neg);
  }
  std::set<std::pair<int, int>> train_pairs;
  for (std::size_t i = 0; i < m.interactions.size(); ++i) {
    if (split.tags[i] == Split::train)
      train_pairs.insert({m.interactions[i].user, m.interactions[i].item});
  }
  CHECK(per_positive.size() == train_pairs.size());
  for (auto& [key, n] : per_positive) {
    CHECK(n == 5);
    CHECK(train_pairs.count(key) == 1);
  }

  // negatives for one positive are distinct (drawn without replacement)
  std::map<std::pair<int, int>, std::set<int>> negs;
  for (const auto& t : triples) negs[{t.user, t.pos}].insert(t.neg);
  for (auto& [key, s] : negs) CHECK(s.size() == 5);

  auto again = sample_negatives(m, split, 11);
  REQUIRE(again.size() == triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    CHECK(again[i].user == triples[i].user);
    CHECK(again[i].pos == triples[i].pos);
    CHECK(again[i].neg == triples[i].neg);
  }
}

TEST_CASE("sampling fails when a user exhausted the candidate items") {
  TransactionLog log;
  add_purchases(log, "u1", 5, "t");  // universe is exactly u1's items
  auto m = build_interactions(log);
  auto split = split_interactions(m, 2);
  CHECK_THROWS_AS(sample_negatives(m, split, 1), DataError);
}

TEST_CASE("popularity sampling tracks the weight ratio") {
  // weights 9:1 -> first index should win about 90% of draws
  Rng rng(123);
  std::vector<double> w = {9.0, 1.0};
  int zero = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) zero += sample_weighted(w, rng) == 0;
  const double freq = static_cast<double>(zero) / draws;
  CHECK(freq > 0.88);
  CHECK(freq < 0.92);

  // all-zero weights fall back to uniform over the pool
  std::vector<double> z = {0.0, 0.0, 0.0, 0.0};
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 8000; ++i) ++hits[sample_weighted(z, rng)];
  for (int h : hits) CHECK(h > 1700);
}

TEST_CASE("degree histogram totals match the event count") {
  TransactionLog log;
  add_purchases(log, "u1", 6, "a");
  add_purchases(log, "u2", 5, "b", 2000);
  log.records.push_back(rec("a0", "u2", 1.0, 9000));  // a0 reaches degree 2
  auto m = build_interactions(log);
  auto report = power_law_report(m);
  std::int64_t item_events = 0, user_events = 0;
  for (const auto& bin : report.bins) {
    item_events += bin.degree * bin.items;
    user_events += bin.degree * bin.users;
  }
  CHECK(item_events == static_cast<std::int64_t>(m.interactions.size()));
  CHECK(user_events == static_cast<std::int64_t>(m.interactions.size()));
}

TEST_CASE("power law slope is absent for a single degree bin") {
  TransactionLog log;
  add_purchases(log, "u1", 5, "a");  // every item degree 1, one user degree 5
  auto m = build_interactions(log);
  auto report = power_law_report(m);
  CHECK(!report.item_slope.has_value());
  CHECK(!report.user_slope.has_value());
}

TEST_CASE("planted inverse-square degree distribution recovers slope -2") {
  // freq(k) = round(1200 / k^2) items of degree k, k = 1..8
  TransactionLog log;
  int token = 0;
  std::int64_t ts = 1;
  for (int k = 1; k <= 8; ++k) {
    const int count = static_cast<int>(std::lround(1200.0 / (k * k)));
    for (int c = 0; c < count; ++c) {
      const std::string tok = "tok" + std::to_string(token++);
      for (int e = 0; e < k; ++e) {
        log.records.push_back(rec(tok, "buyer" + std::to_string(ts), 1.0, ts));
        ++ts;
      }
    }
  }
  auto m = build_interactions(log);
  auto report = power_law_report(m);
  REQUIRE(report.item_slope.has_value());
  CHECK(*report.item_slope == doctest::Approx(-2.0).epsilon(0.05));
}
