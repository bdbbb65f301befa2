#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "basconv/baselines.hpp"
#include "basconv/evaluator.hpp"
#include "basconv/sweeps.hpp"
#include "support/test_util.hpp"

using namespace basconv;

namespace {

// brute-force metric recomputation straight from the definition
struct MetricOracle {
  double recall, hr, ndcg;
};

MetricOracle metrics_oracle(const std::vector<int>& ranked, const std::vector<int>& relevant,
                            int k) {
  MetricOracle m{0, 0, 0};
  int hits = 0;
  double dcg = 0;
  for (int r = 0; r < std::min<int>(k, static_cast<int>(ranked.size())); ++r) {
    bool rel = false;
    for (int x : relevant) rel |= x == ranked[static_cast<std::size_t>(r)];
    if (rel) {
      ++hits;
      dcg += 1.0 / std::log2(r + 2.0);
    }
  }
  m.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
  m.hr = hits > 0 ? 1.0 : 0.0;
  double idcg = 0;
  for (int r = 0; r < std::min<int>(k, static_cast<int>(relevant.size())); ++r)
    idcg += 1.0 / std::log2(r + 2.0);
  m.ndcg = idcg > 0 ? dcg / idcg : 0;
  return m;
}

std::vector<int> full_sort_oracle(const std::vector<double>& scores,
                                  const std::vector<int>& exclude, int k) {
  std::vector<int> cand;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (std::find(exclude.begin(), exclude.end(), i) == exclude.end()) cand.push_back(i);
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  if (static_cast<int>(cand.size()) > k) cand.resize(static_cast<std::size_t>(k));
  return cand;
}

}  // namespace

TEST(RankItems, TieBreakByIndex) {
  // scores (0.9, 0.9, 0.1) on items (5, 2, 7) in a 9-item universe
  std::vector<double> scores(9, -1.0);
  scores[5] = 0.9;
  scores[2] = 0.9;
  scores[7] = 0.1;
  const auto ranked = rank_items(scores, {}, 3);
  EXPECT_EQ(ranked, (std::vector<int>{2, 5, 7}));
}

TEST(RankItems, TruncationAndExclusion) {
  std::vector<double> scores = {0.5, 0.4, 0.3};
  EXPECT_EQ(rank_items(scores, {}, 10).size(), 3u);
  const auto ranked = rank_items(scores, {0}, 10);
  EXPECT_EQ(ranked, (std::vector<int>{1, 2}));
}

TEST(RankItems, MatchesFullSortOracle) {
  RngStream rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 5 + static_cast<int>(rng.uniform_int(40));
    std::vector<double> scores(static_cast<std::size_t>(n));
    // coarse quantization forces plenty of ties
    for (double& s : scores) s = std::floor(rng.uniform(0, 5)) / 5.0;
    std::vector<int> exclude;
    for (int i = 0; i < n; ++i)
      if (rng.uniform01() < 0.2) exclude.push_back(i);
    const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    EXPECT_EQ(rank_items(scores, exclude, k), full_sort_oracle(scores, exclude, k));
  }
}

TEST(Metrics, HandCases) {
  // heldout {a}, a at rank 1
  EXPECT_DOUBLE_EQ(recall_at_k({4, 1, 2}, {4}, 3), 1.0);
  EXPECT_DOUBLE_EQ(hr_at_k({4, 1, 2}, {4}, 3), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k({4, 1, 2}, {4}, 3), 1.0);

  // heldout {a}, a at rank 2: ndcg = 1/log2(3)
  EXPECT_NEAR(ndcg_at_k({1, 4, 2}, {4}, 3), 0.6309297535714574, 1e-12);

  // heldout {a, b}, only a in top-k
  EXPECT_DOUBLE_EQ(recall_at_k({4, 1, 2}, {2, 4}, 1), 0.5);
  EXPECT_DOUBLE_EQ(hr_at_k({4, 1, 2}, {2, 4}, 1), 1.0);
}

TEST(Metrics, BruteForceOracleOnRandomRankings) {
  RngStream rng(2);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 3 + static_cast<int>(rng.uniform_int(30));
    std::vector<int> ranked(static_cast<std::size_t>(n));
    std::iota(ranked.begin(), ranked.end(), 0);
    rng.shuffle(ranked);
    std::vector<int> relevant;
    for (int i = 0; i < n; ++i)
      if (rng.uniform01() < 0.3) relevant.push_back(i);
    if (relevant.empty()) relevant.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n))));
    const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    const MetricOracle o = metrics_oracle(ranked, relevant, k);
    EXPECT_EQ(recall_at_k(ranked, relevant, k), o.recall);
    EXPECT_EQ(hr_at_k(ranked, relevant, k), o.hr);
    EXPECT_LE(std::fabs(ndcg_at_k(ranked, relevant, k) - o.ndcg), 1e-12);
  }
}

TEST(Metrics, InvariantsHrGeRecallAndMonotoneInK) {
  RngStream rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 10;
    std::vector<int> ranked(n);
    std::iota(ranked.begin(), ranked.end(), 0);
    rng.shuffle(ranked);
    std::vector<int> relevant = {ranked[static_cast<std::size_t>(rng.uniform_int(n))],
                                 ranked[static_cast<std::size_t>(rng.uniform_int(n))]};
    std::sort(relevant.begin(), relevant.end());
    relevant.erase(std::unique(relevant.begin(), relevant.end()), relevant.end());
    double prev_r = -1, prev_h = -1, prev_n = -1;
    for (int k = 1; k <= n; ++k) {
      const double r = recall_at_k(ranked, relevant, k);
      const double h = hr_at_k(ranked, relevant, k);
      const double nd = ndcg_at_k(ranked, relevant, k);
      EXPECT_GE(h, r);
      EXPECT_LE(nd, 1.0);
      EXPECT_GE(r, prev_r);
      EXPECT_GE(h, prev_h);
      // with the ideal DCG truncated at min(|relevant|, k), ndcg is only
      // monotone once k has passed |relevant| (the truncation stops moving)
      if (k > static_cast<int>(relevant.size())) {
        EXPECT_GE(nd, prev_n - 1e-15);
      }
      prev_r = r;
      prev_h = h;
      prev_n = nd;
    }
  }
}

TEST(Evaluate, OracleScorerGetsPerfectMetrics) {
  RngStream rng(4);
  const UbiGraph g = UbiGraph::from_edges(
      2, {0, 0, 1}, {{0, 1, 2, 3}, {2, 3, 4, 5}, {0, 4, 5, 6}}, 8);
  const SplitResult s = split_within_basket(g, 0.6, 5);
  const ScoreFn oracle = [&s](int b, std::vector<double>& scores) {
    for (int i : s.heldout[static_cast<std::size_t>(b)]) scores[static_cast<std::size_t>(i)] = 1.0;
  };
  const RankingMetrics m = evaluate(oracle, s, 100);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.ndcg, 1.0);
  EXPECT_DOUBLE_EQ(m.hr, 1.0);
  EXPECT_EQ(m.n_baskets, 3u);
}

TEST(RankItems, ScorerOverloadUsesTrainExclusionAndChecksBasket) {
  const UbiGraph g = UbiGraph::from_edges(1, {0, 0}, {{0, 1, 2, 3}, {0, 1}}, 6);
  const SplitResult s = split_within_basket(g, 0.75, 2);
  const ScoreFn scorer = [](int, std::vector<double>& scores) {
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i);
  };
  const auto ranked = rank_items(scorer, s, 0, 6);
  const auto& train = s.train_graph.basket_items[0];
  for (int i : ranked) EXPECT_FALSE(std::binary_search(train.begin(), train.end(), i));
  EXPECT_EQ(ranked.size(), 6u - train.size());
  EXPECT_THROW(rank_items(scorer, s, 99, 3), DataError);
}

TEST(Evaluate, RankedListsNeverContainTrainingItems) {
  RngStream rng(5);
  const UbiGraph g = UbiGraph::from_edges(
      2, {0, 0, 1}, {{0, 1, 2, 3}, {2, 3, 4, 5}, {0, 4, 5, 6}}, 8);
  const SplitResult s = split_within_basket(g, 0.6, 6);
  for (int b = 0; b < g.n_baskets; ++b) {
    if (s.heldout[static_cast<std::size_t>(b)].empty()) continue;
    std::vector<double> scores(8);
    for (double& x : scores) x = rng.uniform01();
    const auto ranked = rank_items(scores, s.train_graph.basket_items[static_cast<std::size_t>(b)], 8);
    for (int i : ranked) {
      const auto& t = s.train_graph.basket_items[static_cast<std::size_t>(b)];
      EXPECT_FALSE(std::binary_search(t.begin(), t.end(), i));
    }
  }
}

TEST(Evaluate, ValidationTargetRanksMaskedItems) {
  const UbiGraph g =
      UbiGraph::from_edges(1, {0, 0}, {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 1}}, 10);
  const SplitResult s = split_within_basket(g, 0.8, 5);
  ASSERT_EQ(s.masked[0].size(), 1u);
  const int masked_item = s.masked[0][0];
  // score the masked item top: validation metrics must see it
  const ScoreFn scorer = [masked_item](int, std::vector<double>& scores) {
    scores[static_cast<std::size_t>(masked_item)] = 1.0;
  };
  const RankingMetrics m = evaluate(scorer, s, 3, EvalTarget::Validation);
  EXPECT_EQ(m.n_baskets, 1u);  // the 2-item basket has nothing masked
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
}

TEST(Evaluate, ModelScoresIndependentOfHeldoutLabels) {
  // the model reads only the training graph: shuffling held-out labels
  // between baskets must leave every score identical
  const auto planted = testutil::planted_intents(6, 4, 2, 8, 6, 31);
  const UbiGraph g = build_ubi_graph(planted.log, 2);
  SplitResult s = split_within_basket(g, 0.8, 31);

  TrainConfig cfg;
  cfg.dim = 4;
  cfg.n_layers = 1;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.seed = 31;
  const TrainResult r = train(s, cfg);

  const ConvContext ctx = ConvContext::build(s.train_graph);
  const OutputEmbeddings out = concat_output(forward(ctx, r.params));
  const ScoreFn scorer = basconv_scorer(out, ctx.owner);

  SplitResult shuffled = s;
  std::rotate(shuffled.heldout.begin(), shuffled.heldout.begin() + 1, shuffled.heldout.end());

  for (int b = 0; b < g.n_baskets; ++b) {
    std::vector<double> s1(static_cast<std::size_t>(g.n_items)), s2(static_cast<std::size_t>(g.n_items));
    scorer(b, s1);
    scorer(b, s2);
    EXPECT_EQ(s1, s2);
  }
  // structural no-leak check: no held-out pair appears in the training graph
  for (int b = 0; b < g.n_baskets; ++b)
    for (int i : s.heldout[static_cast<std::size_t>(b)]) {
      const auto& t = s.train_graph.basket_items[static_cast<std::size_t>(b)];
      EXPECT_FALSE(std::binary_search(t.begin(), t.end(), i));
    }
}

TEST(ItemPop, CountOrderAndGlobalTieBreak) {
  // u0 bought i0 in 3 baskets, i1 in 1; i2/i3 unseen by u0; i3 globally hotter
  const UbiGraph g = UbiGraph::from_edges(
      2, {0, 0, 0, 1, 1}, {{0, 1}, {0, 2}, {0, 3}, {3, 1}, {3, 2}}, 4);
  SplitResult s;
  s.train_graph = g;
  s.heldout.assign(5, {});
  s.heldout[0] = {2};
  s.masked.assign(5, {});
  const ItemPopModel pop = item_pop_baseline(s);
  EXPECT_GT(pop.score(0, 0), pop.score(0, 1));  // 3 baskets vs 1
  EXPECT_GT(pop.score(0, 2), 0.0);              // global frequency as tie value
  EXPECT_GT(pop.score(0, 3), pop.score(0, 2));  // i3 appears in 3 baskets, i2 in 2

  // brute-force scan oracle for the per-user counts
  for (int u = 0; u < g.n_users; ++u)
    for (int i = 0; i < g.n_items; ++i) {
      int cnt = 0;
      for (int b : g.user_baskets[static_cast<std::size_t>(u)]) {
        const auto& t = g.basket_items[static_cast<std::size_t>(b)];
        cnt += std::binary_search(t.begin(), t.end(), i);
      }
      const auto it = pop.user_counts[static_cast<std::size_t>(u)].find(i);
      EXPECT_EQ(it == pop.user_counts[static_cast<std::size_t>(u)].end() ? 0 : it->second, cnt);
    }
}

TEST(BprMf, SeparableCase) {
  // one user, two items, positives only on item 0
  const UbiGraph g = UbiGraph::from_edges(1, {0, 0}, {{0, 1}, {0, 1}}, 3);
  SplitResult s;
  s.train_graph = with_basket_items(g, {{0}, {0}});
  s.heldout = {{1}, {1}};
  s.masked = {{}, {}};
  TrainConfig cfg;
  cfg.dim = 4;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 16;
  cfg.epochs = 30;
  cfg.patience = 0;
  cfg.seed = 3;
  const MfResult mf = bpr_mf_baseline(s, cfg);
  std::vector<double> scores(3);
  mf.model.scorer()(0, scores);
  EXPECT_GT(scores[0], scores[1]);
  EXPECT_GT(scores[0], scores[2]);
}

TEST(BprMf, GradientMatchesFiniteDifferences) {
  const UbiGraph g = UbiGraph::from_edges(
      3, {0, 1, 2, 0}, {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}, {0, 5}}, 6);
  MfModel m;
  RngStream rng(4);
  m.e_u = xavier_init(g.n_users, 3, rng);
  m.e_i = xavier_init(g.n_items, 3, rng);
  m.owner = &g.owner;
  RngStream srng(5);
  const auto triplets = sample_mf_triplets(g, 10, srng);
  const double lambda = 1e-3;
  DenseMatrix g_u, g_i;
  mf_backward(m, triplets, lambda, g_u, g_i);

  const auto loss = [&] {
    DenseMatrix du, di;
    MfModel probe = m;
    probe.owner = &g.owner;
    return mf_backward(probe, triplets, lambda, du, di);
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < m.e_u.size(); ++k) {
    const double orig = m.e_u.v[k];
    m.e_u.v[k] = orig + h;
    const double fp = loss();
    m.e_u.v[k] = orig - h;
    const double fm = loss();
    m.e_u.v[k] = orig;
    worst = std::max(worst, testutil::grad_rel_err((fp - fm) / (2 * h), g_u.v[k]));
  }
  for (std::size_t k = 0; k < m.e_i.size(); ++k) {
    const double orig = m.e_i.v[k];
    m.e_i.v[k] = orig + h;
    const double fp = loss();
    m.e_i.v[k] = orig - h;
    const double fm = loss();
    m.e_i.v[k] = orig;
    worst = std::max(worst, testutil::grad_rel_err((fp - fm) / (2 * h), g_i.v[k]));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Sweeps, IdentityFractionEqualsPlainEvaluate) {
  const auto planted = testutil::planted_intents(6, 4, 2, 8, 6, 41);
  const UbiGraph g = build_ubi_graph(planted.log, 2);
  const SplitResult s = split_within_basket(g, 0.8, 41);
  TrainConfig cfg;
  cfg.dim = 4;
  cfg.n_layers = 1;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.eval_k = 5;
  cfg.seed = 41;

  const auto rows = sensitivity_sweep(s, {1.0}, cfg);
  ASSERT_EQ(rows.size(), 3u);

  TrainConfig direct = cfg;
  direct.seed = RngStream(cfg.seed).fork(1000).seed();
  const TrainResult tr = train(s, direct);
  const RankingMetrics m = evaluate_basconv(s, tr.params, cfg.eval_k);
  EXPECT_EQ(rows[0].model, "basconv");
  EXPECT_DOUBLE_EQ(rows[0].metrics.recall, m.recall);
  EXPECT_DOUBLE_EQ(rows[0].metrics.ndcg, m.ndcg);
}

TEST(Sweeps, MoreTrainingDataHelpsOnPlantedStructure) {
  const auto planted = testutil::planted_intents(16, 6, 4, 12, 10, 5);
  const UbiGraph g = build_ubi_graph(planted.log, 2);
  const SplitResult split = split_within_basket(g, 0.8, 5);
  TrainConfig cfg;
  cfg.dim = 8;
  cfg.n_layers = 2;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 128;
  cfg.epochs = 60;
  cfg.patience = 0;
  cfg.eval_k = 5;
  cfg.seed = 5;
  const auto rows = sensitivity_sweep(split, {0.2, 1.0}, cfg);
  double r02 = -1.0, r10 = -1.0;
  for (const auto& r : rows)
    if (r.model == "basconv") (r.fraction == 0.2 ? r02 : r10) = r.metrics.recall;
  ASSERT_GE(r02, 0.0);
  ASSERT_GE(r10, 0.0);
  EXPECT_GE(r10, r02);
}

TEST(Sweeps, LayerSweepShapeAndDeterminism) {
  const auto planted = testutil::planted_intents(6, 4, 2, 8, 6, 42);
  const UbiGraph g = build_ubi_graph(planted.log, 2);
  const SplitResult s = split_within_basket(g, 0.8, 42);
  TrainConfig cfg;
  cfg.dim = 4;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.eval_k = 5;
  cfg.seed = 42;

  const auto rows1 = layer_sweep(s, {1, 2}, cfg);
  const auto rows2 = layer_sweep(s, {1, 2}, cfg);
  ASSERT_EQ(rows1.size(), 2u);
  EXPECT_EQ(rows1[0].n_layers, 1);
  EXPECT_EQ(rows1[1].n_layers, 2);
  for (std::size_t i = 0; i < rows1.size(); ++i) {
    EXPECT_DOUBLE_EQ(rows1[i].metrics.recall, rows2[i].metrics.recall);
    EXPECT_DOUBLE_EQ(rows1[i].metrics.hr, rows2[i].metrics.hr);
  }
  EXPECT_THROW(layer_sweep(s, {}, cfg), ConfigError);
}
