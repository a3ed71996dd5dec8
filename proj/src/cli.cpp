#include "mars/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mars/cae.hpp"
#include "mars/checkpoint.hpp"
#include "mars/config.hpp"
#include "mars/csv.hpp"
#include "mars/dataset.hpp"
#include "mars/errors.hpp"
#include "mars/evaluation.hpp"
#include "mars/features.hpp"
#include "mars/graph.hpp"
#include "mars/imageio.hpp"
#include "mars/model.hpp"
#include "mars/rng.hpp"
#include "mars/training.hpp"

namespace fs = std::filesystem;

namespace mars::cli {
namespace {

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::string collection;
  std::string checkpoint;
  std::vector<int> ks;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  int hops = 0;
  int dim = 0;
  int batch_size = 0;
  int trials = 8;
};

// presence of each override flag, per subcommand
struct Flags {
  CLI::Option* seed = nullptr;
  CLI::Option* alpha = nullptr;
  CLI::Option* hops = nullptr;
  CLI::Option* dim = nullptr;
  CLI::Option* batch = nullptr;
  CLI::Option* collection = nullptr;
};

Flags add_common(CLI::App* cmd, Options& o) {
  Flags f;
  cmd->add_option("--config", o.config_path,
                  "flat `key = value` settings file");
  f.seed = cmd->add_option("--seed", o.seed, "run seed override");
  f.collection =
      cmd->add_option("--collection", o.collection, "keep only this collection");
  cmd->add_option("--out", o.out_dir, "output directory")
      ->capture_default_str();
  cmd->add_option("--checkpoint", o.checkpoint, "model snapshot path");
  cmd->add_option("--k", o.ks, "metric cutoff, repeatable")
      ->check(CLI::PositiveNumber);
  f.alpha = cmd->add_option("--alpha", o.alpha, "price loss weight override");
  f.hops = cmd->add_option("--hops", o.hops, "propagation depth override");
  f.dim = cmd->add_option("--dim", o.dim, "embedding width override");
  f.batch = cmd->add_option("--batch-size", o.batch_size,
                            "positive pairs per batch override");
  cmd->add_option("--trials", o.trials, "search trial count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  return f;
}

std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // model and loop settings
      "learning_rate", "epochs", "batch_size", "dim", "alpha", "hops",
      "lambda", "seed", "d_k", "clip_norm",
      // data sources and pipeline knobs
      "transactions", "collection", "traits", "word_vectors",
      "image_embeddings", "text_embeddings", "image_manifest", "image_dir",
      "min_interactions", "negatives", "cae_epochs"};
  return keys;
}

config::KeyValues effective_config(const Options& o, const Flags& f) {
  config::KeyValues kv;
  if (!o.config_path.empty()) kv = config::KeyValues::read_file(o.config_path);
  for (const auto& key : kv.keys()) {
    if (!known_keys().count(key)) {
      throw ConfigError("config: unknown key " + key);
    }
  }
  if (f.seed->count()) kv.set("seed", std::to_string(o.seed));
  if (f.alpha->count()) kv.set("alpha", num17(o.alpha));
  if (f.hops->count()) kv.set("hops", std::to_string(o.hops));
  if (f.dim->count()) kv.set("dim", std::to_string(o.dim));
  if (f.batch->count()) kv.set("batch_size", std::to_string(o.batch_size));
  if (f.collection->count()) kv.set("collection", o.collection);
  return kv;
}

int int_setting(const config::KeyValues& kv, const std::string& key,
                int fallback) {
  const auto v = kv.get_int(key);
  if (!v) return fallback;
  if (*v < 1) throw ConfigError("config: " + key + " must be positive");
  return static_cast<int>(*v);
}

std::string require_path(const config::KeyValues& kv, const std::string& key) {
  const auto v = kv.get(key);
  if (!v || v->empty()) {
    throw DataError("missing input: set " + key + " = <path> in the config");
  }
  return *v;
}

// header `item_id,<dim>` read without pulling in the whole file
int declared_dim(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("embeddings: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto comma = line.find(',');
  if (comma == std::string::npos) {
    throw DataError("embeddings: bad header in " + path);
  }
  const std::string field = line.substr(comma + 1);
  char* end = nullptr;
  const long v = std::strtol(field.c_str(), &end, 10);
  if (end == field.c_str() || *end != '\0' || v < 1) {
    throw DataError("embeddings: bad dimension '" + field + "' in " + path);
  }
  return static_cast<int>(v);
}

struct Sources {
  std::unordered_map<std::string, std::vector<double>> image;
  std::unordered_map<std::string, std::vector<double>> text;
  int image_dim = 0;
  int text_dim = 0;
};

std::vector<std::string> distinct_items(const data::TransactionLog& log) {
  std::set<std::string> ids;
  for (const auto& r : log.records) ids.insert(r.token_id);
  return {ids.begin(), ids.end()};
}

// Precomputed embedding files win; otherwise images go through the
// autoencoder and text is assembled from traits and word vectors.
Sources resolve_sources(const config::KeyValues& kv,
                        const data::TransactionLog& log, std::uint64_t seed) {
  Sources s;
  if (const auto p = kv.get("image_embeddings")) {
    s.image_dim = declared_dim(*p);
    s.image = feat::load_precomputed_embeddings(*p, s.image_dim);
  } else if (kv.has("image_manifest") && kv.has("image_dir")) {
    auto images = feat::load_images(*kv.get("image_manifest"),
                                    *kv.get("image_dir"));
    std::vector<num::Tensor> pixels;
    pixels.reserve(images.size());
    for (const auto& [id, img] : images) pixels.push_back(img);
    const int epochs = int_setting(kv, "cae_epochs", 100);
    const auto cae = feat::train_image_autoencoder(pixels, epochs,
                                                   derive_seed(seed, "cae"));
    for (const auto& [id, img] : images) s.image[id] = cae.encode(img);
    s.image_dim = feat::kCaeEmbeddingDim;
  } else {
    throw DataError(
        "no image feature source: set image_embeddings or "
        "image_manifest + image_dir");
  }

  if (const auto p = kv.get("text_embeddings")) {
    s.text_dim = declared_dim(*p);
    s.text = feat::load_precomputed_embeddings(*p, s.text_dim);
  } else if (kv.has("traits") && kv.has("word_vectors")) {
    const auto traits = feat::load_traits(*kv.get("traits"));
    const auto words = feat::WordVectorStore::load(*kv.get("word_vectors"));
    const auto selected = feat::select_traits(distinct_items(log), traits);
    if (selected.empty()) {
      throw DataError("traits: no usable trait columns");
    }
    s.text_dim = feat::kWordDim * static_cast<int>(selected.size());
    for (const auto& [id, tr] : traits) {
      s.text[id] = feat::assemble_text_embedding(tr, words, selected);
    }
  } else {
    throw DataError(
        "no text feature source: set text_embeddings or "
        "traits + word_vectors");
  }
  return s;
}

struct PipelineData {
  data::TransactionLog log;  // collection and user filtered
  data::InteractionMatrix matrix;
  data::SplitAssignment split;
  feat::FeatureBundle bundle;
  feat::BundleBuildStats stats;
};

// Trait selection runs on the plain min-interactions filter so featurize
// and train agree on the text layout; the real filter additionally drops
// items lacking a feature row, in one pass from the raw log.
PipelineData load_pipeline(const config::KeyValues& kv, std::uint64_t seed) {
  const auto raw = data::load_transactions(require_path(kv, "transactions"),
                                           kv.get("collection").value_or(""));
  const int min_n = int_setting(kv, "min_interactions", 5);
  const auto basic = data::filter_users(raw, min_n);
  const auto src = resolve_sources(kv, basic, seed);
  feat::BundleInputs inputs;
  inputs.image = &src.image;
  inputs.text = &src.text;
  inputs.image_dim = src.image_dim;
  inputs.text_dim = src.text_dim;

  PipelineData d;
  d.log = data::filter_users(raw, min_n, feat::full_feature_predicate(inputs));
  d.matrix = data::build_interactions(d.log);
  d.split = data::split_interactions(d.matrix, seed);
  d.bundle = feat::build_feature_bundle(d.log, d.matrix, inputs, &d.stats);
  feat::check_finite(d.bundle);
  return d;
}

void print_data_summary(const PipelineData& d, const std::string& collection) {
  std::cout << (collection.empty() ? "all collections" : collection) << ": "
            << d.matrix.users.size() << " users / " << d.matrix.items.size()
            << " items / " << d.matrix.interactions.size() << " events\n";
  if (d.stats.missing_image || d.stats.missing_text) {
    std::cout << "zero-filled rows: " << d.stats.missing_image << " image, "
              << d.stats.missing_text << " text\n";
  }
}

std::string out_file(const Options& o, const std::string& name) {
  fs::create_directories(o.out_dir);
  return (fs::path(o.out_dir) / name).string();
}

// Rebuilds the model a checkpoint was trained on and restores its weights.
struct RestoredModel {
  training::TrainConfig cfg;
  PipelineData data;
  model::Model mdl;
  graph::Topology topo;
  model::Propagated prop;
};

RestoredModel restore_from(const std::string& checkpoint_path,
                           const config::KeyValues& kv) {
  const auto c = ckpt::load_checkpoint(checkpoint_path);
  RestoredModel r;
  r.cfg =
      training::TrainConfig::from(config::KeyValues::parse(c.config_text));
  r.data = load_pipeline(kv, r.cfg.seed);
  const auto mcfg =
      model::config_for_bundle(r.data.bundle, r.cfg.d, r.cfg.hops, r.cfg.d_k);
  r.mdl = model::init_model(mcfg, static_cast<int>(r.data.matrix.users.size()),
                            static_cast<int>(r.data.matrix.items.size()),
                            r.cfg.seed);
  ckpt::restore_parameters(c, r.mdl.named_parameters());
  r.topo = graph::build_topology(r.data.matrix, r.data.split);
  num::NoGradGuard ng;
  r.prop = model::propagate_all(r.mdl, r.topo, r.data.bundle);
  return r;
}

int run_ingest(const Options& o, const config::KeyValues& kv) {
  const auto cfg = training::TrainConfig::from(kv);
  const std::string collection = kv.get("collection").value_or("");
  const auto raw = data::load_transactions(require_path(kv, "transactions"),
                                           collection);
  const auto log =
      data::filter_users(raw, int_setting(kv, "min_interactions", 5));
  const auto m = data::build_interactions(log);
  const auto split = data::split_interactions(m, cfg.seed);

  const std::string path = out_file(o, "split.csv");
  data::write_split_csv(path, m, split);

  std::size_t counts[3] = {0, 0, 0};
  for (const auto tag : split.tags) counts[static_cast<int>(tag)]++;
  std::cout << (collection.empty() ? "all collections" : collection) << ": "
            << m.users.size() << " users / " << m.items.size() << " items / "
            << m.interactions.size() << " events\n"
            << "train " << counts[0] << " / validation " << counts[1]
            << " / test " << counts[2] << "\n"
            << "wrote " << path << "\n";
  return 0;
}

int run_featurize(const Options& o, const config::KeyValues& kv) {
  const auto cfg = training::TrainConfig::from(kv);
  const auto raw = data::load_transactions(require_path(kv, "transactions"),
                                           kv.get("collection").value_or(""));
  const auto log =
      data::filter_users(raw, int_setting(kv, "min_interactions", 5));
  const auto src = resolve_sources(kv, log, cfg.seed);

  const auto items = distinct_items(log);
  std::vector<std::pair<std::string, std::vector<double>>> img_rows, txt_rows;
  int missing_image = 0, missing_text = 0;
  for (const auto& id : items) {
    if (const auto it = src.image.find(id); it != src.image.end()) {
      img_rows.emplace_back(id, it->second);
    } else {
      ++missing_image;
    }
    if (const auto it = src.text.find(id); it != src.text.end()) {
      txt_rows.emplace_back(id, it->second);
    } else {
      ++missing_text;
    }
  }
  const std::string img_path = out_file(o, "image_embeddings.csv");
  const std::string txt_path = out_file(o, "text_embeddings.csv");
  feat::write_embeddings(img_path, img_rows);
  feat::write_embeddings(txt_path, txt_rows);
  std::cout << items.size() << " items: " << img_rows.size() << " image rows ("
            << missing_image << " missing), " << txt_rows.size()
            << " text rows (" << missing_text << " missing)\n"
            << "wrote " << img_path << " and " << txt_path << "\n";
  return 0;
}

int run_train(const Options& o, const config::KeyValues& kv) {
  auto cfg = training::TrainConfig::from(kv);
  cfg.validate();
  const auto d = load_pipeline(kv, cfg.seed);
  print_data_summary(d, kv.get("collection").value_or(""));

  const auto out = training::train(d.matrix, d.split, d.bundle, cfg,
                                   &std::cout);

  std::string ckpt_path = o.checkpoint;
  if (ckpt_path.empty()) {
    ckpt_path = out_file(o, "model.ckpt");
  } else if (const auto parent = fs::path(ckpt_path).parent_path();
             !parent.empty()) {
    fs::create_directories(parent);
  }
  ckpt::save_checkpoint(out.best, ckpt_path);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t e = 0; e < out.trace.size(); ++e) {
    const auto& t = out.trace[e];
    rows.push_back({std::to_string(e + 1), num17(t.loss), num17(t.rec_loss),
                    num17(t.price_loss), num17(t.val_recall)});
  }
  const std::string trace_path = out_file(o, "trace.csv");
  csv::write_file(trace_path,
                  {"epoch", "loss", "rec_loss", "price_loss", "val_recall"},
                  rows);

  std::cout << "best epoch " << out.best_epoch << " val_recall@50 "
            << out.best_metric << "\n"
            << "wrote " << ckpt_path << " and " << trace_path << "\n";
  return 0;
}

void print_metrics(const char* tag, const eval::MetricsReport& rep) {
  for (std::size_t ki = 0; ki < rep.ks.size(); ++ki) {
    std::cout << tag << " recall@" << rep.ks[ki] << " "
              << rep.mean_recall[ki] << "  ndcg@" << rep.ks[ki] << " "
              << rep.mean_ndcg[ki] << "\n";
  }
}

int run_evaluate(const Options& o, const Flags& f,
                 const config::KeyValues& kv) {
  if (o.checkpoint.empty()) {
    throw DataError("evaluate needs --checkpoint <file>");
  }
  if (f.seed->count() || f.alpha->count() || f.hops->count() ||
      f.dim->count() || f.batch->count()) {
    std::cerr << "note: model settings come from the checkpoint\n";
  }
  const auto r = restore_from(o.checkpoint, kv);
  print_data_summary(r.data, kv.get("collection").value_or(""));

  const std::vector<int> ks = o.ks.empty() ? std::vector<int>{10, 50} : o.ks;
  const auto cs = eval::build_candidates(
      r.data.matrix, r.data.split, data::Split::test,
      derive_seed(r.cfg.seed, "testcand"), int_setting(kv, "negatives", 100));
  const auto rep = eval::evaluate_model(r.mdl, r.prop, r.topo, cs, ks);
  const auto pop = eval::evaluate_popularity(
      cs, data::item_train_counts(r.data.matrix, r.data.split), ks);

  const std::string model_path = out_file(o, "metrics.csv");
  const std::string pop_path = out_file(o, "metrics_pop.csv");
  eval::write_metrics_csv(model_path, rep, r.data.matrix);
  eval::write_metrics_csv(pop_path, pop, r.data.matrix);

  std::cout << "evaluated " << rep.users.size() << " users (skipped "
            << rep.skipped_users << ", dropped positives "
            << rep.dropped_positives << ", short negative pools "
            << rep.short_negative_users << ")\n";
  print_metrics("model", rep);
  print_metrics("pop  ", pop);
  std::cout << "wrote " << model_path << " and " << pop_path << "\n";
  return 0;
}

int run_search(const Options& o, const config::KeyValues& kv) {
  auto base = training::TrainConfig::from(kv);
  base.validate();
  const auto d = load_pipeline(kv, base.seed);
  print_data_summary(d, kv.get("collection").value_or(""));

  const auto res =
      training::random_search(d.matrix, d.split, d.bundle, base,
                              training::SearchSpace{}, o.trials, base.seed,
                              &std::cout);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t t = 0; t < res.trials.size(); ++t) {
    const auto& trial = res.trials[t];
    rows.push_back({std::to_string(t + 1),
                    std::to_string(trial.cfg.batch_size),
                    std::to_string(trial.cfg.d), num17(trial.cfg.alpha),
                    std::to_string(trial.cfg.hops), num17(trial.cfg.lambda),
                    num17(trial.metric)});
  }
  const std::string trials_path = out_file(o, "search.csv");
  csv::write_file(
      trials_path,
      {"trial", "batch_size", "dim", "alpha", "hops", "lambda", "val_recall"},
      rows);

  const std::string best_path = out_file(o, "best_config.txt");
  std::ofstream best(best_path, std::ios::binary);
  if (!best) throw IoError("cannot write " + best_path);
  best << res.best.to_key_values().render();
  best.close();

  std::cout << "best val_recall@50 " << res.best_metric << " (batch "
            << res.best.batch_size << ", dim " << res.best.d << ", alpha "
            << res.best.alpha << ", hops " << res.best.hops << ", lambda "
            << res.best.lambda << ")\n"
            << "wrote " << trials_path << " and " << best_path << "\n";
  return 0;
}

int run_analyze(const Options& o, const config::KeyValues& kv) {
  if (o.checkpoint.empty()) {
    throw DataError("analyze needs --checkpoint <file>");
  }
  const auto r = restore_from(o.checkpoint, kv);
  print_data_summary(r.data, kv.get("collection").value_or(""));

  const auto plr = data::power_law_report(r.data.matrix);
  std::vector<std::vector<std::string>> rows;
  for (const auto& bin : plr.bins) {
    rows.push_back({std::to_string(bin.degree), std::to_string(bin.items),
                    std::to_string(bin.users)});
  }
  const std::string degree_path = out_file(o, "degree_distribution.csv");
  csv::write_file(degree_path, {"degree", "items", "users"}, rows);
  std::cout << "log-log degree slope: items ";
  if (plr.item_slope) {
    std::cout << *plr.item_slope;
  } else {
    std::cout << "n/a";
  }
  std::cout << ", users ";
  if (plr.user_slope) {
    std::cout << *plr.user_slope;
  } else {
    std::cout << "n/a";
  }
  std::cout << "\n";

  const auto att = eval::attention_report(r.mdl, r.prop, r.topo);
  const std::string att_path = out_file(o, "attention.csv");
  eval::write_attention_csv(att_path, att, r.data.matrix);
  for (int mod = 0; mod < graph::kModalities; ++mod) {
    std::cout << graph::modality_name(static_cast<graph::Modality>(mod))
              << " attention mean " << att.mean[mod] << " quartiles "
              << att.quartiles[mod][0] << " " << att.quartiles[mod][1] << " "
              << att.quartiles[mod][2] << "\n";
  }
  std::cout << "wrote " << degree_path << " and " << att_path << "\n";
  return 0;
}

// positive integer or nothing; the pipeline itself runs single threaded, the
// cap exists so heavier builds cannot oversubscribe a box
bool threads_env_ok() {
  const char* env = std::getenv("MARS_THREADS");
  if (!env) return true;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  return end != env && *end == '\0' && v >= 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"multi-modal graph recommender pipeline"};
  app.footer("environment: MARS_THREADS caps worker threads");
  app.require_subcommand(1);

  Options o;
  auto* ingest = app.add_subcommand(
      "ingest", "filter a transaction export and write the split");
  auto* featurize = app.add_subcommand(
      "featurize", "write per-item image and text embedding files");
  auto* train =
      app.add_subcommand("train", "fit the model, write checkpoint and trace");
  auto* evaluate = app.add_subcommand(
      "evaluate", "score a checkpoint on the test split against Pop");
  auto* search =
      app.add_subcommand("search", "random hyperparameter search");
  auto* analyze = app.add_subcommand(
      "analyze", "degree distribution and attention reports");

  std::map<const CLI::App*, Flags> flags;
  for (auto* cmd : {ingest, featurize, train, evaluate, search, analyze}) {
    flags[cmd] = add_common(cmd, o);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (!threads_env_ok()) {
    std::cerr << "MARS_THREADS must be a positive integer\n";
    return 1;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const Flags& f = flags[sub];
  try {
    const auto kv = effective_config(o, f);
    if (sub == ingest) return run_ingest(o, kv);
    if (sub == featurize) return run_featurize(o, kv);
    if (sub == train) return run_train(o, kv);
    if (sub == evaluate) return run_evaluate(o, f, kv);
    if (sub == search) return run_search(o, kv);
    return run_analyze(o, kv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace mars::cli
