#pragma once

#include <unordered_map>
#include <vector>

#include "basconv/evaluator.hpp"
#include "basconv/graph.hpp"
#include "basconv/trainer.hpp"

namespace basconv {

// ---------------------------------------------------------------------------
// ItemPop: user-wise item purchase frequency
// ---------------------------------------------------------------------------

// Ranks candidates by how often the basket's owner bought them in training
// baskets; ties fall back to global item frequency, then item index (the
// ranker's built-in tie-break). Counts are folded into one exactly
// representable score: count * (max_global + 1) + global.
struct ItemPopModel {
  std::vector<std::unordered_map<int, int>> user_counts;
  std::vector<int> global_counts;
  double tie_base = 1.0;
  const std::vector<int>* owner = nullptr;

  double score(int basket, int item) const {
    const int u = (*owner)[static_cast<std::size_t>(basket)];
    const auto& cnt = user_counts[static_cast<std::size_t>(u)];
    const auto it = cnt.find(item);
    const double c = it == cnt.end() ? 0.0 : static_cast<double>(it->second);
    return c * tie_base + static_cast<double>(global_counts[static_cast<std::size_t>(item)]);
  }

  ScoreFn scorer() const {
    return [this](int b, std::vector<double>& scores) {
      for (int i = 0; i < static_cast<int>(scores.size()); ++i)
        scores[static_cast<std::size_t>(i)] = score(b, i);
    };
  }
};

inline ItemPopModel item_pop_baseline(const SplitResult& split) {
  const UbiGraph& g = split.train_graph;
  ItemPopModel m;
  m.owner = &g.owner;
  m.user_counts.resize(static_cast<std::size_t>(g.n_users));
  m.global_counts.assign(static_cast<std::size_t>(g.n_items), 0);
  for (int b = 0; b < g.n_baskets; ++b) {
    const int u = g.owner[static_cast<std::size_t>(b)];
    for (int i : g.basket_items[static_cast<std::size_t>(b)]) {
      ++m.user_counts[static_cast<std::size_t>(u)][i];
      ++m.global_counts[static_cast<std::size_t>(i)];
    }
  }
  int gmax = 0;
  for (int c : m.global_counts) gmax = std::max(gmax, c);
  m.tie_base = static_cast<double>(gmax) + 1.0;
  return m;
}

// ---------------------------------------------------------------------------
// BPR-MF: matrix factorization on merged user-item interactions
// ---------------------------------------------------------------------------

// Baskets of a user are merged into one interaction set; embeddings are
// trained with the same BPR loss and Adam machinery as the main model.
// score(b, i) = e_owner(b) . e_i.
struct MfModel {
  DenseMatrix e_u, e_i;
  const std::vector<int>* owner = nullptr;

  ScoreFn scorer() const {
    return [this](int b, std::vector<double>& scores) {
      const double* eu = e_u.row((*owner)[static_cast<std::size_t>(b)]);
      for (int i = 0; i < e_i.rows; ++i)
        scores[static_cast<std::size_t>(i)] = dot(e_i.row(i), eu, e_u.cols);
    };
  }
};

struct MfTriplet {
  int user;
  int pos;
  int neg;
};

inline std::vector<MfTriplet> sample_mf_triplets(const UbiGraph& g, int n, RngStream& rng) {
  std::vector<int> eligible;
  for (int u = 0; u < g.n_users; ++u) {
    const std::size_t np = g.user_items[static_cast<std::size_t>(u)].size();
    if (np >= 1 && np < static_cast<std::size_t>(g.n_items)) eligible.push_back(u);
  }
  if (eligible.empty()) throw DataError("no user has both positives and a nonempty complement");
  std::vector<MfTriplet> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const int u = eligible[static_cast<std::size_t>(rng.index(eligible.size()))];
    const auto& pos_items = g.user_items[static_cast<std::size_t>(u)];
    const int pos = pos_items[static_cast<std::size_t>(rng.index(pos_items.size()))];
    int neg;
    do {
      neg = rng.index(static_cast<std::size_t>(g.n_items));
    } while (std::binary_search(pos_items.begin(), pos_items.end(), neg));
    out.push_back({u, pos, neg});
  }
  return out;
}

// Batch loss and gradients of the MF objective
// -sum log sigma(e_u.(e_i - e_j)) + lambda ||Theta||^2.
inline double mf_backward(const MfModel& m, const std::vector<MfTriplet>& triplets,
                          double lambda_reg, DenseMatrix& g_u, DenseMatrix& g_i) {
  const int d = m.e_u.cols;
  g_u = DenseMatrix(m.e_u.rows, d);
  g_i = DenseMatrix(m.e_i.rows, d);
  double loss = 0.0;
  for (const auto& t : triplets) {
    const double* eu = m.e_u.row(t.user);
    const double* ei = m.e_i.row(t.pos);
    const double* ej = m.e_i.row(t.neg);
    double x = 0.0;
    for (int k = 0; k < d; ++k) x += eu[k] * (ei[k] - ej[k]);
    loss += softplus(-x);
    const double g = -sigmoid(-x);
    double* gu = g_u.row(t.user);
    double* gi = g_i.row(t.pos);
    double* gj = g_i.row(t.neg);
    for (int k = 0; k < d; ++k) {
      gu[k] += g * (ei[k] - ej[k]);
      gi[k] += g * eu[k];
      gj[k] -= g * eu[k];
    }
  }
  if (lambda_reg != 0.0) {
    for (std::size_t k = 0; k < g_u.size(); ++k) g_u.v[k] += 2.0 * lambda_reg * m.e_u.v[k];
    for (std::size_t k = 0; k < g_i.size(); ++k) g_i.v[k] += 2.0 * lambda_reg * m.e_i.v[k];
    loss += lambda_reg * (frobenius_sq(m.e_u) + frobenius_sq(m.e_i));
  }
  return loss;
}

struct MfResult {
  MfModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

inline MfResult bpr_mf_baseline(const SplitResult& split, const TrainConfig& cfg) {
  const UbiGraph& g = split.train_graph;
  MfResult res;
  RngStream rng(cfg.seed);
  res.model.e_u = xavier_init(g.n_users, cfg.dim, rng);
  res.model.e_i = xavier_init(g.n_items, cfg.dim, rng);
  res.model.owner = &g.owner;

  AdamState adam = AdamState::zeros_like({&res.model.e_u, &res.model.e_i});
  RngStream sampler = RngStream(cfg.seed).fork(0x73616d70ULL);

  bool has_validation = false;
  for (const auto& mm : split.masked)
    if (!mm.empty()) {
      has_validation = true;
      break;
    }

  const std::size_t n_edges = g.n_edges_ui();
  const int steps_per_epoch =
      static_cast<int>((n_edges + static_cast<std::size_t>(cfg.batch_size) - 1) /
                       static_cast<std::size_t>(cfg.batch_size));

  MfModel best = res.model;
  double best_recall = 0.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const auto triplets = sample_mf_triplets(g, cfg.batch_size, sampler);
      DenseMatrix g_u, g_i;
      const double loss = mf_backward(res.model, triplets, cfg.lambda_reg, g_u, g_i);
      if (!std::isfinite(loss)) throw NumericError("non-finite MF loss at epoch " + std::to_string(epoch));
      adam_step({&res.model.e_u, &res.model.e_i}, {&g_u, &g_i}, adam, cfg.learning_rate,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      loss_sum += loss;
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = loss_sum / steps_per_epoch;
    if (has_validation) {
      const RankingMetrics vm = evaluate(res.model.scorer(), split, cfg.eval_k, EvalTarget::Validation);
      st.val_recall = vm.recall;
      st.val_ndcg = vm.ndcg;
      st.val_hr = vm.hr;
      st.val_baskets = vm.n_baskets;
      if (st.val_recall > best_recall || res.best_epoch == 0) {
        best_recall = st.val_recall;
        res.best_epoch = epoch;
        best = res.model;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    res.history.push_back(st);
    if (has_validation && cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  if (has_validation && res.best_epoch > 0) {
    best.owner = res.model.owner;
    res.model = std::move(best);
  }
  return res;
}

}  // namespace basconv
