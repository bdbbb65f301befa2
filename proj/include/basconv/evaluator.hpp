#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "basconv/graph.hpp"
#include "basconv/model.hpp"

namespace basconv {

// Fills `scores` (one slot per item) with the model's scores for basket b.
using ScoreFn = std::function<void(int basket, std::vector<double>& scores)>;

// Which relevant set a ranking is judged against.
//   Test:       relevants = heldout[b], candidates exclude all training items.
//   Validation: relevants = masked[b], candidates exclude only the unmasked
//               training items (the masked ones must stay rankable).
enum class EvalTarget { Test, Validation };

struct RankingMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  double hr = 0.0;
  int k = 0;
  std::size_t n_baskets = 0;  // baskets actually evaluated
  std::size_t n_skipped = 0;  // baskets with an empty relevant set
};

// Top-k candidate items by score descending, ties broken by ascending item
// index. Items in exclude_sorted never appear.
inline std::vector<int> rank_items(const std::vector<double>& scores,
                                   const std::vector<int>& exclude_sorted, int k) {
  std::vector<int> cand;
  cand.reserve(scores.size());
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (!std::binary_search(exclude_sorted.begin(), exclude_sorted.end(), i)) cand.push_back(i);
  const auto better = [&scores](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  };
  if (k < static_cast<int>(cand.size())) {
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), better);
    cand.resize(static_cast<std::size_t>(k));
  } else {
    std::sort(cand.begin(), cand.end(), better);
  }
  return cand;
}

// Ranking for one evaluation basket: candidates are all items minus the
// basket's training items.
inline std::vector<int> rank_items(const ScoreFn& scorer, const SplitResult& split, int b, int k) {
  if (b < 0 || b >= split.train_graph.n_baskets || split.heldout[static_cast<std::size_t>(b)].empty())
    throw DataError("basket index " + std::to_string(b) + " has no held-out items");
  std::vector<double> scores(static_cast<std::size_t>(split.train_graph.n_items), 0.0);
  scorer(b, scores);
  return rank_items(scores, split.train_graph.basket_items[static_cast<std::size_t>(b)], k);
}

inline double recall_at_k(const std::vector<int>& ranked, const std::vector<int>& relevant_sorted,
                          int k) {
  const int top = std::min<int>(k, static_cast<int>(ranked.size()));
  int hits = 0;
  for (int r = 0; r < top; ++r)
    hits += std::binary_search(relevant_sorted.begin(), relevant_sorted.end(),
                               ranked[static_cast<std::size_t>(r)]);
  return static_cast<double>(hits) / static_cast<double>(relevant_sorted.size());
}

inline double hr_at_k(const std::vector<int>& ranked, const std::vector<int>& relevant_sorted,
                      int k) {
  const int top = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < top; ++r)
    if (std::binary_search(relevant_sorted.begin(), relevant_sorted.end(),
                           ranked[static_cast<std::size_t>(r)]))
      return 1.0;
  return 0.0;
}

// Binary-relevance NDCG with 1-based ranks and the ideal DCG truncated at
// min(|relevant|, k).
inline double ndcg_at_k(const std::vector<int>& ranked, const std::vector<int>& relevant_sorted,
                        int k) {
  const int top = std::min<int>(k, static_cast<int>(ranked.size()));
  double dcg = 0.0;
  for (int r = 0; r < top; ++r)
    if (std::binary_search(relevant_sorted.begin(), relevant_sorted.end(),
                           ranked[static_cast<std::size_t>(r)]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  const int ideal = std::min<int>(k, static_cast<int>(relevant_sorted.size()));
  double idcg = 0.0;
  for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

// Macro-averages the three metrics over every evaluable basket (each basket
// weighted equally). Per-basket work is independent; the final sums are
// accumulated in basket order.
inline RankingMetrics evaluate(const ScoreFn& scorer, const SplitResult& split, int k,
                               EvalTarget target = EvalTarget::Test) {
  const UbiGraph& g = split.train_graph;
  const int nb = g.n_baskets;
  std::vector<double> rec(static_cast<std::size_t>(nb)), nd(static_cast<std::size_t>(nb)), hit(static_cast<std::size_t>(nb));
  std::vector<char> used(static_cast<std::size_t>(nb), 0);
  std::size_t n_skipped = 0;

#pragma omp parallel for schedule(dynamic, 16)
  for (int b = 0; b < nb; ++b) {
    const auto& relevant = target == EvalTarget::Test ? split.heldout[static_cast<std::size_t>(b)]
                                                      : split.masked[static_cast<std::size_t>(b)];
    if (relevant.empty()) continue;
    std::vector<int> exclude;
    if (target == EvalTarget::Test) {
      exclude = g.basket_items[static_cast<std::size_t>(b)];
    } else {
      // unmasked training items only
      const auto& train = g.basket_items[static_cast<std::size_t>(b)];
      exclude.reserve(train.size());
      std::set_difference(train.begin(), train.end(), relevant.begin(), relevant.end(),
                          std::back_inserter(exclude));
    }
    std::vector<double> scores(static_cast<std::size_t>(g.n_items), 0.0);
    scorer(b, scores);
    const auto ranked = rank_items(scores, exclude, k);
    rec[static_cast<std::size_t>(b)] = recall_at_k(ranked, relevant, k);
    nd[static_cast<std::size_t>(b)] = ndcg_at_k(ranked, relevant, k);
    hit[static_cast<std::size_t>(b)] = hr_at_k(ranked, relevant, k);
    used[static_cast<std::size_t>(b)] = 1;
  }

  RankingMetrics m;
  m.k = k;
  for (int b = 0; b < nb; ++b) {
    const auto& relevant = target == EvalTarget::Test ? split.heldout[static_cast<std::size_t>(b)]
                                                      : split.masked[static_cast<std::size_t>(b)];
    if (target == EvalTarget::Test && relevant.empty() &&
        !g.basket_items[static_cast<std::size_t>(b)].empty())
      ++n_skipped;
    if (!used[static_cast<std::size_t>(b)]) continue;
    m.recall += rec[static_cast<std::size_t>(b)];
    m.ndcg += nd[static_cast<std::size_t>(b)];
    m.hr += hit[static_cast<std::size_t>(b)];
    ++m.n_baskets;
  }
  if (m.n_baskets > 0) {
    m.recall /= static_cast<double>(m.n_baskets);
    m.ndcg /= static_cast<double>(m.n_baskets);
    m.hr /= static_cast<double>(m.n_baskets);
  }
  m.n_skipped = n_skipped;
  return m;
}

// Scorer over precomputed concatenated embeddings:
// s_i = e*_i . (e*_owner(b) + e*_b). The embeddings must outlive the scorer.
inline ScoreFn basconv_scorer(const OutputEmbeddings& out, const std::vector<int>& owner) {
  return [&out, &owner](int b, std::vector<double>& scores) {
    const int w = out.width();
    const double* eu = out.users.row(owner[static_cast<std::size_t>(b)]);
    const double* eb = out.baskets.row(b);
    std::vector<double> q(static_cast<std::size_t>(w));
    for (int c = 0; c < w; ++c) q[static_cast<std::size_t>(c)] = eu[c] + eb[c];
    for (int i = 0; i < out.items.rows; ++i)
      scores[static_cast<std::size_t>(i)] = dot(out.items.row(i), q.data(), w);
  };
}

}  // namespace basconv
