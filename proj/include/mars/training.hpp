#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mars/checkpoint.hpp"
#include "mars/config.hpp"
#include "mars/dataset.hpp"
#include "mars/features.hpp"
#include "mars/model.hpp"

// The optimization loop: per-epoch negative resampling, batched BPR plus
// price-movement BCE, Adam updates, per-epoch validation recall, and
// best-epoch checkpointing. Also the hyperparameter random search.

namespace mars::training {

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 50;
  int batch_size = 1024;  // positive pairs per batch
  int d = 128;
  double alpha = 0.2;
  int hops = 2;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  int d_k = 64;
  double clip_norm = 5.0;  // <= 0 disables clipping

  void validate() const;

  // missing keys keep their defaults; unknown keys are rejected upstream
  static TrainConfig from(const config::KeyValues& kv);
  config::KeyValues to_key_values() const;
};

struct EpochStats {
  double loss = 0.0;        // mean combined loss over batches
  double rec_loss = 0.0;    // mean ranking term
  double price_loss = 0.0;  // mean price term
  double val_recall = 0.0;  // validation recall@50
};

struct TrainOutput {
  model::Model model;     // parameters as of the last epoch
  ckpt::Checkpoint best;  // deep copy at the best validation epoch
  std::vector<EpochStats> trace;
  int best_epoch = 0;  // 1-based
  double best_metric = 0.0;
};

TrainOutput train(const data::InteractionMatrix& m,
                  const data::SplitAssignment& split,
                  const feat::FeatureBundle& features, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

struct SearchSpace {
  std::vector<int> batch_sizes = {1024, 4096};
  std::vector<int> dims = {128, 512};
  std::vector<double> alphas = {0.1, 0.2};
  std::vector<int> hop_choices = {1, 2, 3};
  std::vector<double> lambdas = {0.1, 0.001};
};

struct SearchTrial {
  TrainConfig cfg;
  double metric = 0.0;  // best validation recall@50 of the run
};

struct SearchResult {
  TrainConfig best;
  double best_metric = 0.0;
  std::vector<SearchTrial> trials;
};

// Uniform draws from the space, each trained in full; the winner is the
// highest validation recall@50, earlier trial on ties.
SearchResult random_search(const data::InteractionMatrix& m,
                           const data::SplitAssignment& split,
                           const feat::FeatureBundle& features,
                           const TrainConfig& base, const SearchSpace& space,
                           int trials, std::uint64_t seed,
                           std::ostream* log = nullptr);

}  // namespace mars::training
