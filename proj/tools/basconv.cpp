// basconv command-line interface: prepare / train / evaluate / recommend /
// sweep / config over the artifacts in an output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "basconv/baselines.hpp"
#include "basconv/checkpoint.hpp"
#include "basconv/config.hpp"
#include "basconv/evaluator.hpp"
#include "basconv/graph.hpp"
#include "basconv/model.hpp"
#include "basconv/sweeps.hpp"
#include "basconv/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace basconv;

namespace {

struct Paths {
  fs::path out;
  fs::path graph() const { return out / "graph.tsv"; }
  fs::path split() const { return out / "split.json"; }
  fs::path summary() const { return out / "summary.json"; }
  fs::path edges() const { return out / "edges.tsv"; }
  fs::path train_log() const { return out / "train_log.jsonl"; }
  fs::path ckpt_best() const { return out / "ckpt-best.bcv"; }
  fs::path ckpt_epoch(int n) const { return out / ("ckpt-epoch" + std::to_string(n) + ".bcv"); }
  fs::path metrics() const { return out / "metrics.json"; }
  fs::path metrics_table() const { return out / "metrics_table.txt"; }
  fs::path sweep_table(const std::string& kind) const { return out / ("sweep_" + kind + ".tsv"); }
};

struct Stamp {
  std::string config_hash;
  std::uint64_t seed = 0;

  void apply(json& j) const {
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["artifact_version"] = std::string(kArtifactVersion);
  }
  std::string comment() const {
    return "# config_hash=" + config_hash + " seed=" + std::to_string(seed) +
           " artifact_version=" + std::string(kArtifactVersion) + "\n";
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
  if (!os) throw ConfigError("short write to " + path.string());
}

void write_json_file(const fs::path& path, json j, const Stamp& stamp) {
  stamp.apply(j);
  write_text(path, j.dump(2) + "\n");
}

json histogram_json(const std::vector<std::pair<int, int>>& h) {
  json a = json::array();
  for (const auto& [deg, cnt] : h) a.push_back({deg, cnt});
  return a;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("missing artifact: " + p.string() + " (run `basconv prepare` first)");
}

// ---------------------------------------------------------------------------
// Artifact persistence
// ---------------------------------------------------------------------------

void write_split_json(const fs::path& path, const UbiGraph& g, const SplitResult& split,
                      const RunConfig& cfg, const Stamp& stamp) {
  json baskets = json::array();
  for (int b = 0; b < g.n_baskets; ++b) {
    json jb;
    jb["basket"] = g.basket_ids.raw[static_cast<std::size_t>(b)];
    auto ids = [&g](const std::vector<int>& xs) {
      json a = json::array();
      for (int i : xs) a.push_back(g.item_ids.raw[static_cast<std::size_t>(i)]);
      return a;
    };
    jb["train"] = ids(split.train_graph.basket_items[static_cast<std::size_t>(b)]);
    jb["heldout"] = ids(split.heldout[static_cast<std::size_t>(b)]);
    jb["masked"] = ids(split.masked[static_cast<std::size_t>(b)]);
    baskets.push_back(std::move(jb));
  }
  json j;
  j["train_frac"] = cfg.train_frac;
  j["subsample_fraction"] = cfg.subsample_fraction;
  j["dropped_eval_baskets"] = split.dropped_eval_baskets;
  j["baskets"] = std::move(baskets);
  write_json_file(path, std::move(j), stamp);
}

struct Artifacts {
  UbiGraph graph;  // the full filtered graph (training + held-out edges)
  SplitResult split;
};

Artifacts load_artifacts(const Paths& paths) {
  require_file(paths.graph());
  require_file(paths.split());
  std::ifstream gs(paths.graph());
  Artifacts art;
  art.graph = import_edges(gs);

  std::ifstream ss(paths.split());
  json j;
  ss >> j;
  const UbiGraph& g = art.graph;
  SplitResult& split = art.split;
  split.heldout.assign(static_cast<std::size_t>(g.n_baskets), {});
  split.masked.assign(static_cast<std::size_t>(g.n_baskets), {});
  split.dropped_eval_baskets = j.value("dropped_eval_baskets", std::size_t{0});
  std::vector<std::vector<int>> train(static_cast<std::size_t>(g.n_baskets));
  for (const auto& jb : j.at("baskets")) {
    const int b = g.basket_ids.lookup(jb.at("basket").get<std::string>());
    if (b < 0) throw DataError("split.json references unknown basket '" + jb.at("basket").get<std::string>() + "'");
    auto resolve = [&g](const json& arr) {
      std::vector<int> out;
      for (const auto& s : arr) {
        const int i = g.item_ids.lookup(s.get<std::string>());
        if (i < 0) throw DataError("split.json references unknown item '" + s.get<std::string>() + "'");
        out.push_back(i);
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    train[static_cast<std::size_t>(b)] = resolve(jb.at("train"));
    split.heldout[static_cast<std::size_t>(b)] = resolve(jb.at("heldout"));
    split.masked[static_cast<std::size_t>(b)] = resolve(jb.at("masked"));
  }
  // consistency: train + heldout must lie within the full basket contents,
  // and reproduce them exactly unless training was subsampled
  const double frac = j.value("subsample_fraction", 1.0);
  for (int b = 0; b < g.n_baskets; ++b) {
    std::vector<int> merged = train[static_cast<std::size_t>(b)];
    merged.insert(merged.end(), split.heldout[static_cast<std::size_t>(b)].begin(),
                  split.heldout[static_cast<std::size_t>(b)].end());
    std::sort(merged.begin(), merged.end());
    const auto& full = g.basket_items[static_cast<std::size_t>(b)];
    const bool consistent = frac < 1.0 ? std::includes(full.begin(), full.end(), merged.begin(),
                                                       merged.end())
                                       : merged == full;
    if (!consistent)
      throw DataError("split.json is inconsistent with graph.tsv for basket '" +
                      g.basket_ids.raw[static_cast<std::size_t>(b)] + "'");
  }
  split.train_graph = with_basket_items(g, std::move(train));
  return art;
}

// ---------------------------------------------------------------------------
// Output formatting
// ---------------------------------------------------------------------------

std::string metrics_table_text(const std::vector<std::pair<std::string, RankingMetrics>>& rows,
                               const Stamp& stamp) {
  char buf[160];
  std::string text = stamp.comment();
  std::snprintf(buf, sizeof(buf), "%-14s %10s %10s %10s %10s\n", "Method", "Recall", "NDCG", "HR",
                "Baskets");
  text += buf;
  for (const auto& [name, m] : rows) {
    std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f %10.4f %10zu\n", name.c_str(), m.recall,
                  m.ndcg, m.hr, m.n_baskets);
    text += buf;
  }
  return text;
}

json metrics_json(const std::string& model, const RankingMetrics& m, const Stamp& stamp) {
  json j;
  j["model"] = model;
  j["k"] = m.k;
  j["recall"] = m.recall;
  j["ndcg"] = m.ndcg;
  j["hr"] = m.hr;
  j["n_baskets"] = m.n_baskets;
  j["n_skipped"] = m.n_skipped;
  stamp.apply(j);
  return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& cfg, bool export_edge_list) {
  if (cfg.transactions.empty())
    throw ConfigError("no transactions file configured (set data.transactions)");
  const Paths paths{fs::path(cfg.out_dir)};
  fs::create_directories(paths.out);
  const Stamp stamp{config_hash(cfg), cfg.seed};

  ColumnSpec cols;
  cols.user = cfg.user_column;
  cols.basket = cfg.basket_column;
  cols.item = cfg.item_column;
  const TransactionLog log = load_transactions(cfg.transactions, cols);
  std::cerr << "loaded " << log.records.size() << " records (" << log.n_raw << " raw rows)\n";

  std::unordered_set<std::string> raw_users, raw_baskets, raw_items;
  for (const auto& r : log.records) {
    raw_users.insert(r.user);
    raw_baskets.insert(r.basket);
    raw_items.insert(r.item);
  }

  const UbiGraph g = build_ubi_graph(log, cfg.min_basket_size);
  SplitResult split = split_within_basket(g, cfg.train_frac, cfg.seed);
  if (cfg.subsample_fraction < 1.0)
    split = subsample_training(split, cfg.subsample_fraction,
                               RngStream(cfg.seed).fork(0x73756273ULL).seed());

  {
    std::ostringstream os;
    os << stamp.comment();
    export_graph(g, os);
    write_text(paths.graph(), os.str());
  }
  write_split_json(paths.split(), g, split, cfg, stamp);

  json s;
  s["raw"] = {{"records", log.n_raw},
              {"deduplicated_records", log.records.size()},
              {"users", raw_users.size()},
              {"baskets", raw_baskets.size()},
              {"items", raw_items.size()}};
  s["graph"] = {{"users", g.n_users},
                {"baskets", g.n_baskets},
                {"items", g.n_items},
                {"interactions", g.n_edges_bi()},
                {"user_item_edges", g.n_edges_ui()},
                {"dropped_baskets", raw_baskets.size() - static_cast<std::size_t>(g.n_baskets)},
                {"dropped_users", raw_users.size() - static_cast<std::size_t>(g.n_users)},
                {"dropped_items", raw_items.size() - static_cast<std::size_t>(g.n_items)},
                {"min_basket_size", cfg.min_basket_size},
                {"fingerprint", to_hex(g.fingerprint())}};
  s["split"] = {{"train_frac", cfg.train_frac},
                {"subsample_fraction", cfg.subsample_fraction},
                {"training_edges", split.train_graph.n_edges_bi()},
                {"eval_baskets", split.n_eval_baskets()},
                {"dropped_eval_baskets", split.dropped_eval_baskets}};
  s["degree_histograms"] = {{"basket_size", histogram_json(degree_histogram(g.basket_items))},
                            {"user_baskets", histogram_json(degree_histogram(g.user_baskets))},
                            {"user_items", histogram_json(degree_histogram(g.user_items))},
                            {"item_baskets", histogram_json(degree_histogram(g.item_baskets))}};
  write_json_file(paths.summary(), std::move(s), stamp);

  if (export_edge_list) {
    std::ostringstream os;
    os << stamp.comment();
    export_edges(g, os, /*include_derived_ui=*/true);
    write_text(paths.edges(), os.str());
  }

  std::cout << "prepared " << g.n_users << " users, " << g.n_baskets << " baskets, " << g.n_items
            << " items, " << g.n_edges_bi() << " interactions -> " << paths.out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume_path) {
  const Paths paths{fs::path(cfg.out_dir)};
  const Stamp stamp{config_hash(cfg), cfg.seed};
  const Artifacts art = load_artifacts(paths);
  const TrainConfig tcfg = cfg.train_config();

  bool in_grid = false;
  for (double lr : reference_lr_grid()) in_grid |= lr == tcfg.learning_rate;
  if (!in_grid)
    std::cerr << "warning: learning rate " << tcfg.learning_rate
              << " is outside the reference grid {1e-5,5e-5,1e-4,5e-4,1e-3,5e-3}\n";

  CheckpointMeta meta;
  meta.graph_fingerprint = art.graph.fingerprint();
  meta.config_hash = stamp.config_hash;
  meta.seed = cfg.seed;

  std::ofstream log(paths.train_log(), std::ios::binary);
  if (!log) throw ConfigError("cannot write " + paths.train_log().string());
  {
    json header;
    header["model"] = cfg.model;
    stamp.apply(header);
    log << header.dump() << "\n";
  }
  const auto log_epoch = [&](const EpochStats& st) {
    json j;
    j["epoch"] = st.epoch;
    j["mean_loss"] = st.mean_loss;
    j["val_recall"] = st.val_recall;
    j["val_ndcg"] = st.val_ndcg;
    j["val_hr"] = st.val_hr;
    j["val_baskets"] = st.val_baskets;
    if (!cfg.deterministic) j["wall_time_s"] = st.wall_s;
    log << j.dump() << "\n";
    log.flush();
    std::cerr << "epoch " << st.epoch << ": loss " << st.mean_loss << ", val recall@" << cfg.k
              << " " << st.val_recall << " (" << st.wall_s << "s)\n";
  };

  if (cfg.model == "basconv") {
    std::optional<TrainInit> init;
    if (!resume_path.empty()) {
      LoadedModelCheckpoint lc = load_model_checkpoint(resume_path);
      if (lc.meta.graph_fingerprint != meta.graph_fingerprint)
        throw DataError("checkpoint " + resume_path + " was trained on a different graph");
      if (!lc.has_adam)
        throw ConfigError("checkpoint " + resume_path + " carries no optimizer state; cannot resume");
      init = TrainInit{std::move(lc.params), std::move(lc.adam), lc.meta.epoch};
      std::cerr << "resuming from " << resume_path << " at epoch " << lc.meta.epoch << "\n";
    }

    const EpochCallback cb = [&](const EpochStats& st, const ModelParams& params,
                                 const AdamState& adam, bool is_best) {
      log_epoch(st);
      CheckpointMeta m = meta;
      m.epoch = st.epoch;
      save_model_checkpoint(paths.ckpt_epoch(st.epoch).string(), params, m, &adam);
      if (is_best) save_model_checkpoint(paths.ckpt_best().string(), params, m);
    };
    const TrainResult res = train(art.split, tcfg, cb, init ? &*init : nullptr);
    CheckpointMeta m = meta;
    m.epoch = res.best_epoch > 0 ? res.best_epoch
                                 : (res.history.empty() ? 0 : res.history.back().epoch);
    save_model_checkpoint(paths.ckpt_best().string(), res.params, m);
    std::cout << "trained basconv for " << res.history.size() << " epochs; best epoch "
              << res.best_epoch << " (val recall " << res.best_val_recall << ") -> "
              << paths.ckpt_best().string() << "\n";
    return 0;
  }
  if (cfg.model == "bpr-mf") {
    if (!resume_path.empty()) throw ConfigError("--resume is only supported for model = basconv");
    const MfResult res = bpr_mf_baseline(art.split, tcfg);
    for (const auto& st : res.history) log_epoch(st);
    CheckpointMeta m = meta;
    m.epoch = res.best_epoch;
    save_mf_checkpoint(paths.ckpt_best().string(), res.model.e_u, res.model.e_i, m);
    std::cout << "trained bpr-mf for " << res.history.size() << " epochs -> "
              << paths.ckpt_best().string() << "\n";
    return 0;
  }
  if (cfg.model == "item-pop")
    throw ConfigError("item-pop has no trainable parameters; run `basconv evaluate` directly");
  throw ConfigError("unknown model '" + cfg.model + "' (expected basconv, bpr-mf or item-pop)");
}

void check_fingerprint(const CheckpointMeta& meta, const UbiGraph& g, const std::string& path) {
  if (meta.graph_fingerprint != g.fingerprint())
    throw DataError("checkpoint " + path + " was trained on a different graph (fingerprint " +
                    to_hex(meta.graph_fingerprint) + " != " + to_hex(g.fingerprint()) + ")");
}

int cmd_evaluate(const RunConfig& cfg, std::string checkpoint) {
  const Paths paths{fs::path(cfg.out_dir)};
  const Stamp stamp{config_hash(cfg), cfg.seed};
  const Artifacts art = load_artifacts(paths);
  if (checkpoint.empty()) checkpoint = paths.ckpt_best().string();

  RankingMetrics m;
  if (cfg.model == "basconv") {
    const LoadedModelCheckpoint lc = load_model_checkpoint(checkpoint);
    check_fingerprint(lc.meta, art.graph, checkpoint);
    const ConvContext ctx = ConvContext::build(art.split.train_graph);
    const OutputEmbeddings out = concat_output(forward(ctx, lc.params));
    m = evaluate(basconv_scorer(out, ctx.owner), art.split, cfg.k);
  } else if (cfg.model == "bpr-mf") {
    const LoadedMfCheckpoint lc = load_mf_checkpoint(checkpoint);
    check_fingerprint(lc.meta, art.graph, checkpoint);
    MfModel model;
    model.e_u = lc.e_u;
    model.e_i = lc.e_i;
    model.owner = &art.split.train_graph.owner;
    m = evaluate(model.scorer(), art.split, cfg.k);
  } else if (cfg.model == "item-pop") {
    const ItemPopModel pop = item_pop_baseline(art.split);
    m = evaluate(pop.scorer(), art.split, cfg.k);
  } else {
    throw ConfigError("unknown model '" + cfg.model + "'");
  }

  write_text(paths.metrics(), metrics_json(cfg.model, m, stamp).dump(2) + "\n");
  const std::string table = metrics_table_text({{cfg.model, m}}, stamp);
  write_text(paths.metrics_table(), table);
  std::cout << table;
  return 0;
}

int cmd_recommend(const RunConfig& cfg, std::string checkpoint, const std::string& user_raw,
                  const std::vector<std::string>& item_raws, int top_k) {
  const Paths paths{fs::path(cfg.out_dir)};
  const Artifacts art = load_artifacts(paths);
  if (checkpoint.empty()) checkpoint = paths.ckpt_best().string();
  const LoadedModelCheckpoint lc = load_model_checkpoint(checkpoint);
  check_fingerprint(lc.meta, art.graph, checkpoint);
  const ModelParams& p = lc.params;

  const UbiGraph& g = art.split.train_graph;
  std::vector<std::string> unresolved;
  const int user = g.user_ids.lookup(user_raw);
  if (user < 0) unresolved.push_back(user_raw);
  std::vector<int> items;
  for (const auto& s : item_raws) {
    const int i = g.item_ids.lookup(s);
    if (i < 0)
      unresolved.push_back(s);
    else
      items.push_back(i);
  }
  if (!unresolved.empty()) {
    std::string msg = "unresolved ids:";
    for (const auto& s : unresolved) msg += " '" + s + "'";
    throw DataError(msg);
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());

  const ConvContext ctx = ConvContext::build(g);
  const LayerEmbeddings emb = forward(ctx, p);
  const OutputEmbeddings out = concat_output(emb);
  const int d = p.dim;
  const int L = p.n_layers();

  // Ad-hoc basket: run the basket-aggregator chain on the fly against the
  // trained layer embeddings, starting from the fixed zero row. An empty
  // item list contributes no basket term at all.
  DenseMatrix eb_star(1, d * (L + 1));
  if (!items.empty()) {
    DenseMatrix eb(1, d);
    for (int l = 0; l < L; ++l) {
      const LayerParams& lp = p.layers[static_cast<std::size_t>(l)];
      DenseMatrix owner_row(1, d), item_mean(1, d);
      for (int k = 0; k < d; ++k)
        owner_row(0, k) = emb.users[static_cast<std::size_t>(l)](user, k);
      for (int i : items)
        for (int k = 0; k < d; ++k)
          item_mean(0, k) += emb.items[static_cast<std::size_t>(l)](i, k);
      for (double& x : item_mean.v) x /= static_cast<double>(items.size());

      DenseMatrix h = self_propagate(eb, lp.w_sp);
      add_inplace(h, interact(owner_row, eb, lp.w_ub, p.hadamard_first));
      add_inplace(h, interact(item_mean, eb, lp.w_ib, p.hadamard_first));
      if (!lp.bias.empty())
        for (int k = 0; k < d; ++k) h(0, k) += lp.bias(0, k);
      for (int k = 0; k < d; ++k) eb_star(0, l * d + k) = eb(0, k);
      eb = activation(h, p.activation);
    }
    for (int k = 0; k < d; ++k) eb_star(0, L * d + k) = eb(0, k);
  }

  const int width = out.width();
  const double* eu_star = out.users.row(user);
  struct Scored {
    int item;
    double user_term, basket_term;
  };
  std::vector<Scored> scored;
  for (int i = 0; i < g.n_items; ++i) {
    if (std::binary_search(items.begin(), items.end(), i)) continue;  // given items excluded
    const double* ei = out.items.row(i);
    scored.push_back({i, dot(eu_star, ei, width), dot(eb_star.row(0), ei, width)});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    const double sa = a.user_term + a.basket_term, sb = b.user_term + b.basket_term;
    if (sa != sb) return sa > sb;
    return a.item < b.item;
  });
  if (static_cast<int>(scored.size()) > top_k) scored.resize(static_cast<std::size_t>(top_k));

  std::printf("%-6s %-24s %12s %12s %12s\n", "rank", "item", "score", "user_term", "basket_term");
  for (std::size_t r = 0; r < scored.size(); ++r) {
    const auto& s = scored[r];
    std::printf("%-6zu %-24s %12.6f %12.6f %12.6f\n", r + 1,
                g.item_ids.raw[static_cast<std::size_t>(s.item)].c_str(),
                s.user_term + s.basket_term, s.user_term, s.basket_term);
  }
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& kind) {
  const Paths paths{fs::path(cfg.out_dir)};
  const Stamp stamp{config_hash(cfg), cfg.seed};
  const Artifacts art = load_artifacts(paths);
  const TrainConfig tcfg = cfg.train_config();

  std::vector<SweepRow> rows;
  if (kind == "fraction") {
    rows = sensitivity_sweep(art.split, cfg.fractions, tcfg, /*verbose=*/true);
  } else if (kind == "layers") {
    rows = layer_sweep(art.split, cfg.layer_counts, tcfg, /*verbose=*/true);
  } else {
    throw ConfigError("unknown sweep kind '" + kind + "' (expected fraction or layers)");
  }

  std::string tsv = stamp.comment();
  tsv += "model\tfraction\tlayers\trecall\tndcg\thr\tn_baskets\n";
  for (const auto& r : rows) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s\t%g\t%d\t%.6f\t%.6f\t%.6f\t%zu\n", r.model.c_str(),
                  r.fraction, r.n_layers, r.metrics.recall, r.metrics.ndcg, r.metrics.hr,
                  r.metrics.n_baskets);
    tsv += buf;
  }
  write_text(paths.sweep_table(kind), tsv);

  std::vector<std::pair<std::string, RankingMetrics>> table;
  for (const auto& r : rows) {
    std::string name = r.model;
    if (kind == "fraction")
      name += "@" + std::to_string(r.fraction).substr(0, 4);
    else
      name += "-" + std::to_string(r.n_layers);
    table.push_back({name, r.metrics});
  }
  std::cout << metrics_table_text(table, stamp);
  return 0;
}

int cmd_config(const RunConfig& cfg, bool print_defaults) {
  if (print_defaults) {
    std::cout << serialize_config(RunConfig{});
    return 0;
  }
  std::cout << serialize_config(cfg);
  std::cout << "\n# config_hash = " << config_hash(cfg) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BasConv within-basket recommendation engine"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::optional<std::string> out_flag;
  std::optional<int> threads_flag;
  std::optional<bool> deterministic_flag;
  app.add_option("--config", config_path, "configuration file (key = value sections)");
  app.add_option("--seed", seed_flag, "override run.seed");
  app.add_option("--out", out_flag, "override run.out_dir");
  app.add_option("--threads", threads_flag, "override run.threads (0 = library default)");
  app.add_flag("--deterministic,!--no-deterministic", deterministic_flag,
               "deterministic mode (default on)");

  auto* prepare = app.add_subcommand("prepare", "ingest transactions, build and split the graph");
  bool export_edge_list = false;
  prepare->add_flag("--export-edges", export_edge_list, "also export the ub/bi/ui edge list");

  auto* train_cmd = app.add_subcommand("train", "train the configured model");
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from (basconv only)");
  std::optional<int> epochs_flag;
  train_cmd->add_option("--epochs", epochs_flag, "override train.epochs");

  auto* eval_cmd = app.add_subcommand("evaluate", "rank held-out items and report metrics");
  std::string ckpt_path;
  std::optional<int> k_flag;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path (default <out>/ckpt-best.bcv)");
  eval_cmd->add_option("--k", k_flag, "override eval.k");

  auto* rec_cmd = app.add_subcommand("recommend", "score candidates for an ad-hoc basket");
  std::string rec_user;
  std::vector<std::string> rec_items;
  std::string rec_ckpt;
  std::optional<int> rec_k;
  rec_cmd->add_option("--user", rec_user, "raw user id")->required();
  rec_cmd->add_option("--items", rec_items, "raw item ids already in the basket")->delimiter(',');
  rec_cmd->add_option("--checkpoint", rec_ckpt, "checkpoint path");
  rec_cmd->add_option("--k", rec_k, "number of recommendations");

  auto* sweep_cmd = app.add_subcommand("sweep", "training-fraction or layer-count sweeps");
  std::string sweep_kind;
  sweep_cmd->add_option("--kind", sweep_kind, "fraction | layers")->required();

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  bool print_defaults = false;
  config_cmd->add_flag("--print-defaults", print_defaults, "print the built-in defaults");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    apply_env_overrides(cfg);
    if (seed_flag) cfg.seed = *seed_flag;
    if (out_flag) cfg.out_dir = *out_flag;
    if (threads_flag) cfg.threads = *threads_flag;
    if (deterministic_flag) cfg.deterministic = *deterministic_flag;
    if (epochs_flag) cfg.epochs = *epochs_flag;
    if (k_flag) cfg.k = *k_flag;

#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif

    if (prepare->parsed()) return cmd_prepare(cfg, export_edge_list);
    if (train_cmd->parsed()) return cmd_train(cfg, resume_path);
    if (eval_cmd->parsed()) return cmd_evaluate(cfg, ckpt_path);
    if (rec_cmd->parsed())
      return cmd_recommend(cfg, rec_ckpt, rec_user, rec_items, rec_k ? *rec_k : cfg.k);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, sweep_kind);
    if (config_cmd->parsed()) return cmd_config(cfg, print_defaults);
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
