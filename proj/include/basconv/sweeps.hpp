#pragma once

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "basconv/baselines.hpp"
#include "basconv/evaluator.hpp"
#include "basconv/trainer.hpp"

namespace basconv {

struct SweepRow {
  std::string model;
  double fraction = 1.0;
  int n_layers = 0;
  RankingMetrics metrics;
};

inline RankingMetrics evaluate_basconv(const SplitResult& split, const ModelParams& params, int k) {
  const ConvContext ctx = ConvContext::build(split.train_graph);
  const LayerEmbeddings emb = forward(ctx, params);
  const OutputEmbeddings out = concat_output(emb);
  return evaluate(basconv_scorer(out, ctx.owner), split, k, EvalTarget::Test);
}

// Retrains every model from scratch on each training fraction (each fraction
// gets its own derived seed) and evaluates on the untouched held-out sets.
inline std::vector<SweepRow> sensitivity_sweep(const SplitResult& split,
                                               const std::vector<double>& fractions,
                                               const TrainConfig& cfg, bool verbose = false) {
  std::vector<SweepRow> rows;
  for (const double f : fractions) {
    const std::uint64_t frac_seed =
        RngStream(cfg.seed).fork(static_cast<std::uint64_t>(std::llround(f * 1000.0))).seed();
    const SplitResult sub = subsample_training(split, f, frac_seed);
    if (verbose && sub.dropped_eval_baskets > 0)
      std::cerr << "fraction " << f << ": dropped " << sub.dropped_eval_baskets
                << " baskets with no surviving training items\n";
    TrainConfig fcfg = cfg;
    fcfg.seed = frac_seed;

    if (verbose) std::cerr << "fraction " << f << ": training basconv\n";
    const TrainResult tr = train(sub, fcfg);
    rows.push_back({"basconv", f, fcfg.n_layers, evaluate_basconv(sub, tr.params, cfg.eval_k)});

    if (verbose) std::cerr << "fraction " << f << ": training bpr-mf\n";
    const MfResult mf = bpr_mf_baseline(sub, fcfg);
    rows.push_back(
        {"bpr-mf", f, 0, evaluate(mf.model.scorer(), sub, cfg.eval_k, EvalTarget::Test)});

    const ItemPopModel pop = item_pop_baseline(sub);
    rows.push_back(
        {"item-pop", f, 0, evaluate(pop.scorer(), sub, cfg.eval_k, EvalTarget::Test)});
  }
  return rows;
}

// Retrains the model once per layer count and tabulates the metrics.
inline std::vector<SweepRow> layer_sweep(const SplitResult& split,
                                         const std::vector<int>& layer_counts,
                                         const TrainConfig& cfg, bool verbose = false) {
  if (layer_counts.empty()) throw ConfigError("layer sweep needs at least one layer count");
  std::vector<SweepRow> rows;
  for (const int L : layer_counts) {
    if (verbose) std::cerr << "layers " << L << ": training basconv\n";
    TrainConfig lcfg = cfg;
    lcfg.n_layers = L;
    const TrainResult tr = train(split, lcfg);
    rows.push_back({"basconv", 1.0, L, evaluate_basconv(split, tr.params, cfg.eval_k)});
  }
  return rows;
}

}  // namespace basconv
