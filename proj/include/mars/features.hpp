#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mars/dataset.hpp"

// Per-modality item features and the user feature matrix. Scalars are
// z-scored over the collection before tiling; text is a concatenation of
// per-trait word-vector sums; images come from the autoencoder or a
// precomputed embedding file.

namespace mars::feat {

inline constexpr int kWordDim = 300;
inline constexpr int kTileDim = 64;
inline constexpr int kMaxTraits = 6;

struct ItemScalars {
  // keyed by token id
  std::unordered_map<std::string, double> avg_price;         // ETH/WETH only
  std::unordered_map<std::string, double> avg_holding_days;  // 0 if never resold
};

ItemScalars build_item_scalar_features(const data::TransactionLog& log);

struct UserFeatureRow {
  double avg_price = 0.0;
  double avg_holding_days = 0.0;
  double txn_count = 0.0;
};

// Holding of a still-held token runs to the dataset end timestamp.
// txn_count includes both buy- and sell-side events of the wallet.
std::unordered_map<std::string, UserFeatureRow> build_user_features(
    const data::TransactionLog& log);

class WordVectorStore {
 public:
  // lines: word v1 ... v300
  static WordVectorStore load(const std::string& path);

  void put(const std::string& word, std::vector<double> vec);
  const std::vector<double>* find(const std::string& word) const;
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_map<std::string, std::vector<double>> words_;
};

// Traits with the fewest missing values across items, ties lexicographic,
// at most kMaxTraits of them.
std::vector<std::string> select_traits(
    const std::vector<std::string>& items,
    const std::unordered_map<std::string, std::map<std::string, std::string>>&
        traits_by_item,
    int max_traits = kMaxTraits);

// 300 * |selected| dims: per trait the sum of word vectors of its phrase,
// zeros for absent traits and unknown words.
std::vector<double> assemble_text_embedding(
    const std::map<std::string, std::string>& traits,
    const WordVectorStore& store,
    const std::vector<std::string>& selected_traits);

// CSV token_id,trait_name,value
std::unordered_map<std::string, std::map<std::string, std::string>> load_traits(
    const std::string& path);

std::vector<double> tile_scalar(double x, int dim = kTileDim);

// (x - mean) / population std per entry; all-equal input maps to zeros.
std::vector<double> zscore(const std::vector<double>& xs);

// header line `item_id,<dim>`, then token_id,v1,...,vdim rows
std::unordered_map<std::string, std::vector<double>> load_precomputed_embeddings(
    const std::string& path, int expected_dim);

void write_embeddings(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<double>>>& rows);

// Everything the model consumes, aligned with InteractionMatrix order.
struct FeatureBundle {
  std::vector<std::vector<double>> image;  // per item
  std::vector<std::vector<double>> text;
  std::vector<std::vector<double>> price;        // tiled z-scored avg price
  std::vector<std::vector<double>> transaction;  // tiled z-scored holding
  std::vector<std::vector<double>> user;         // 3 z-scored columns

  int image_dim() const { return image.empty() ? 0 : static_cast<int>(image[0].size()); }
  int text_dim() const { return text.empty() ? 0 : static_cast<int>(text[0].size()); }
};

// Tiles and z-scores the scalar modalities and user columns; image/text
// rows are taken as given (items missing from a map get zero vectors and
// are reported in missing_image/missing_text).
struct BundleInputs {
  const std::unordered_map<std::string, std::vector<double>>* image = nullptr;
  const std::unordered_map<std::string, std::vector<double>>* text = nullptr;
  int image_dim = 0;
  int text_dim = 0;
};

struct BundleBuildStats {
  int missing_image = 0;
  int missing_text = 0;
};

FeatureBundle build_feature_bundle(const data::TransactionLog& log,
                                   const data::InteractionMatrix& m,
                                   const BundleInputs& inputs,
                                   BundleBuildStats* stats = nullptr);

// True when the item has a row in every provided modality map; used as the
// filter_users item predicate.
data::ItemPredicate full_feature_predicate(const BundleInputs& inputs);

void check_finite(const FeatureBundle& bundle);

}  // namespace mars::feat
