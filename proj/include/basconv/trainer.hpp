#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "basconv/evaluator.hpp"
#include "basconv/graph.hpp"
#include "basconv/matrix.hpp"
#include "basconv/model.hpp"

namespace basconv {

// ---------------------------------------------------------------------------
// Triplet sampling
// ---------------------------------------------------------------------------

// BPR training triplet: positive item from the basket's training items,
// negative item from outside the basket's full (training + held-out) item
// set, so held-out labels never act as negatives.
struct Triplet {
  int basket;
  int pos;
  int neg;
};

inline std::vector<Triplet> sample_triplets(const SplitResult& split, int n, RngStream& rng) {
  const UbiGraph& g = split.train_graph;
  std::vector<int> eligible;
  eligible.reserve(static_cast<std::size_t>(g.n_baskets));
  for (int b = 0; b < g.n_baskets; ++b) {
    const std::size_t n_train = g.basket_items[static_cast<std::size_t>(b)].size();
    const std::size_t n_full = n_train + split.heldout[static_cast<std::size_t>(b)].size();
    if (n_train >= 1 && n_full < static_cast<std::size_t>(g.n_items)) eligible.push_back(b);
  }
  if (eligible.empty()) throw DataError("no basket has both training items and a nonempty complement");

  std::vector<Triplet> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const int b = eligible[static_cast<std::size_t>(rng.index(eligible.size()))];
    const auto& train = g.basket_items[static_cast<std::size_t>(b)];
    const int pos = train[static_cast<std::size_t>(rng.index(train.size()))];
    int neg;
    do {
      neg = rng.index(static_cast<std::size_t>(g.n_items));
    } while (split.in_full_basket(b, neg));
    out.push_back({b, pos, neg});
  }
  return out;
}

// ---------------------------------------------------------------------------
// BPR loss
// ---------------------------------------------------------------------------

// log(1 + e^z), stable for large |z|.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double l2_norm_sq(const ModelParams& p) {
  double s = 0.0;
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&s](const char*, const DenseMatrix& m) { s += frobenius_sq(m); });
  return s;
}

// -sum log sigma(pos - neg) + lambda * ||Theta||^2, computed through the
// softplus form.
inline double bpr_loss(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores,
                       const ModelParams& params, double lambda_reg) {
  if (pos_scores.size() != neg_scores.size())
    throw DimensionError("bpr_loss: score sequences differ in length");
  double s = 0.0;
  for (std::size_t t = 0; t < pos_scores.size(); ++t)
    s += softplus(neg_scores[t] - pos_scores[t]);
  return s + lambda_reg * l2_norm_sq(params);
}

// ---------------------------------------------------------------------------
// Backward pass (exact reverse-mode through the full forward)
// ---------------------------------------------------------------------------

struct BatchGrads {
  ModelGrads grads;
  double loss = 0.0;              // interaction + regularization
  double interaction_loss = 0.0;  // without the regularizer
};

namespace detail {

// d += g * (a - b), row-wise
inline void axpy_rows(double* d, const double* a, const double* b, double g, int n) {
  for (int k = 0; k < n; ++k) d[k] += g * (a[k] - b[k]);
}

inline void check_finite(const ModelGrads& g, long long step) {
  bool ok = true;
  std::string bad;
  for_each_tensor(const_cast<ModelGrads&>(g), [&](const char* name, const DenseMatrix& m) {
    if (ok && !m.all_finite()) {
      ok = false;
      bad = name;
    }
  });
  if (!ok)
    throw NumericError("non-finite gradient in " + bad + " at step " + std::to_string(step));
}

}  // namespace detail

// Gradients of the batch BPR loss with respect to every trainable parameter.
// The fixed zero layer-0 basket matrix is not trainable and receives none.
inline BatchGrads backward(const ConvContext& ctx, const ModelParams& p,
                           const std::vector<Triplet>& triplets, double lambda_reg,
                           long long step = 0) {
  const int L = p.n_layers();
  const int d = p.dim;

  ForwardTrace trace;
  const LayerEmbeddings emb = forward(ctx, p, &trace);

  // Concatenated-score margins and the per-layer seed gradients they induce.
  std::vector<DenseMatrix> seed_u, seed_b, seed_i;
  for (int l = 0; l <= L; ++l) {
    seed_u.emplace_back(ctx.n_users, d);
    seed_b.emplace_back(ctx.n_baskets, d);
    seed_i.emplace_back(ctx.n_items, d);
  }

  BatchGrads out;
  out.grads = ModelGrads::zeros_like(p);

  for (const Triplet& t : triplets) {
    const int u = ctx.owner[static_cast<std::size_t>(t.basket)];
    double x = 0.0;
    for (int l = 0; l <= L; ++l) {
      const double* eu = emb.users[static_cast<std::size_t>(l)].row(u);
      const double* eb = emb.baskets[static_cast<std::size_t>(l)].row(t.basket);
      const double* ei = emb.items[static_cast<std::size_t>(l)].row(t.pos);
      const double* ej = emb.items[static_cast<std::size_t>(l)].row(t.neg);
      for (int k = 0; k < d; ++k) x += (eu[k] + eb[k]) * (ei[k] - ej[k]);
    }
    out.interaction_loss += softplus(-x);
    const double g = -sigmoid(-x);  // d/dx of softplus(-x)
    for (int l = 0; l <= L; ++l) {
      const double* eu = emb.users[static_cast<std::size_t>(l)].row(u);
      const double* eb = emb.baskets[static_cast<std::size_t>(l)].row(t.basket);
      const double* ei = emb.items[static_cast<std::size_t>(l)].row(t.pos);
      const double* ej = emb.items[static_cast<std::size_t>(l)].row(t.neg);
      detail::axpy_rows(seed_u[static_cast<std::size_t>(l)].row(u), ei, ej, g, d);
      detail::axpy_rows(seed_b[static_cast<std::size_t>(l)].row(t.basket), ei, ej, g, d);
      double* gi = seed_i[static_cast<std::size_t>(l)].row(t.pos);
      double* gj = seed_i[static_cast<std::size_t>(l)].row(t.neg);
      for (int k = 0; k < d; ++k) {
        const double q = g * (eu[k] + eb[k]);
        gi[k] += q;
        gj[k] -= q;
      }
    }
  }

  // Walk the layers backwards. g_* holds dLoss/dE_*^(l+1) entering each step.
  DenseMatrix g_u = std::move(seed_u[static_cast<std::size_t>(L)]);
  DenseMatrix g_b = std::move(seed_b[static_cast<std::size_t>(L)]);
  DenseMatrix g_i = std::move(seed_i[static_cast<std::size_t>(L)]);

  for (int l = L - 1; l >= 0; --l) {
    const std::size_t lz = static_cast<std::size_t>(l);
    const LayerParams& lp = p.layers[lz];
    LayerParams& gl = out.grads.layers[lz];
    const DenseMatrix& eu = emb.users[lz];
    const DenseMatrix& eb = emb.baskets[lz];
    const DenseMatrix& ei = emb.items[lz];

    const DenseMatrix d_u = hadamard(g_u, activation_deriv(trace.h_u[lz], p.activation));
    const DenseMatrix d_b = hadamard(g_b, activation_deriv(trace.h_b[lz], p.activation));
    const DenseMatrix d_i = hadamard(g_i, activation_deriv(trace.h_i[lz], p.activation));

    // shared self-propagation weight
    add_inplace(gl.w_sp, matmul_tn(eu, d_u));
    add_inplace(gl.w_sp, matmul_tn(eb, d_b));
    add_inplace(gl.w_sp, matmul_tn(ei, d_i));
    if (p.use_biases) {
      add_inplace(gl.bias, colsum(d_u));
      add_inplace(gl.bias, colsum(d_b));
      add_inplace(gl.bias, colsum(d_i));
    }

    DenseMatrix nu = matmul(d_u, transpose(lp.w_sp));  // self-propagation responses
    DenseMatrix nb = matmul(d_b, transpose(lp.w_sp));
    DenseMatrix ni = matmul(d_i, transpose(lp.w_sp));

    if (p.hadamard_first) {
      // term (A (*) E) W: dW = (A (*) E)^T D, dE = (D W^T) (*) A,
      // dE_neighbor = Nrel^T ((D W^T) (*) E)
      const auto back_term = [&](const DenseMatrix& dns, const DenseMatrix& agg,
                                 const DenseMatrix& self, const DenseMatrix& w, DenseMatrix& gw,
                                 DenseMatrix& gself, const CsrMatrix& rel_t, DenseMatrix& gneigh) {
        add_inplace(gw, matmul_tn(hadamard(agg, self), dns));
        const DenseMatrix m = matmul(dns, transpose(w));
        add_hadamard_inplace(gself, m, agg);
        add_inplace(gneigh, spmm(rel_t, hadamard(m, self)));
      };
      back_term(d_u, trace.a_ub[lz], eu, lp.w_ub, gl.w_ub, nu, ctx.nub_t, nb);
      back_term(d_u, trace.a_ui[lz], eu, lp.w_ui, gl.w_ui, nu, ctx.nui_t, ni);
      back_term(d_b, trace.a_bu[lz], eb, lp.w_ub, gl.w_ub, nb, ctx.nbu_t, nu);
      back_term(d_b, trace.a_bi[lz], eb, lp.w_ib, gl.w_ib, nb, ctx.nbi_t, ni);
      back_term(d_i, trace.a_iu[lz], ei, lp.w_ui, gl.w_ui, ni, ctx.niu_t, nu);
      back_term(d_i, trace.a_ib[lz], ei, lp.w_ib, gl.w_ib, ni, ctx.nib_t, nb);
    } else {
      // term A (*) (E W): dW = E^T (D (*) A), dE = (D (*) A) W^T,
      // dE_neighbor = Nrel^T (D (*) (E W))
      const auto back_term = [&](const DenseMatrix& dns, const DenseMatrix& agg,
                                 const DenseMatrix& self, const DenseMatrix& w, DenseMatrix& gw,
                                 DenseMatrix& gself, const CsrMatrix& rel_t, DenseMatrix& gneigh) {
        const DenseMatrix da = hadamard(dns, agg);
        add_inplace(gw, matmul_tn(self, da));
        add_inplace(gself, matmul(da, transpose(w)));
        add_inplace(gneigh, spmm(rel_t, hadamard(dns, matmul(self, w))));
      };
      back_term(d_u, trace.a_ub[lz], eu, lp.w_ub, gl.w_ub, nu, ctx.nub_t, nb);
      back_term(d_u, trace.a_ui[lz], eu, lp.w_ui, gl.w_ui, nu, ctx.nui_t, ni);
      back_term(d_b, trace.a_bu[lz], eb, lp.w_ub, gl.w_ub, nb, ctx.nbu_t, nu);
      back_term(d_b, trace.a_bi[lz], eb, lp.w_ib, gl.w_ib, nb, ctx.nbi_t, ni);
      back_term(d_i, trace.a_iu[lz], ei, lp.w_ui, gl.w_ui, ni, ctx.niu_t, nu);
      back_term(d_i, trace.a_ib[lz], ei, lp.w_ib, gl.w_ib, ni, ctx.nib_t, nb);
    }

    add_inplace(nu, seed_u[lz]);
    add_inplace(nb, seed_b[lz]);
    add_inplace(ni, seed_i[lz]);
    g_u = std::move(nu);
    g_b = std::move(nb);
    g_i = std::move(ni);
  }

  out.grads.e_u0 = std::move(g_u);
  out.grads.e_i0 = std::move(g_i);
  // g_b at layer 0 targets the fixed zero basket matrix: dropped.

  if (lambda_reg != 0.0) {
    ModelParams& pm = const_cast<ModelParams&>(p);
    std::vector<const DenseMatrix*> pt;
    for_each_tensor(pm, [&pt](const char*, const DenseMatrix& m) { pt.push_back(&m); });
    std::size_t idx = 0;
    for_each_tensor(out.grads, [&](const char*, DenseMatrix& gm) {
      const DenseMatrix& theta = *pt[idx++];
      for (std::size_t k = 0; k < gm.size(); ++k) gm.v[k] += 2.0 * lambda_reg * theta.v[k];
    });
  }

  out.loss = out.interaction_loss + lambda_reg * l2_norm_sq(p);
  detail::check_finite(out.grads, step);
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

// First/second-moment accumulators for an ordered list of tensors.
struct AdamState {
  std::vector<DenseMatrix> m, v;
  long long t = 0;

  static AdamState zeros_like(const std::vector<const DenseMatrix*>& tensors) {
    AdamState st;
    for (const DenseMatrix* p : tensors) {
      st.m.emplace_back(p->rows, p->cols);
      st.v.emplace_back(p->rows, p->cols);
    }
    return st;
  }

  static AdamState for_params(const ModelParams& p) {
    std::vector<const DenseMatrix*> ts;
    for_each_tensor(const_cast<ModelParams&>(p),
                    [&ts](const char*, const DenseMatrix& m) { ts.push_back(&m); });
    return zeros_like(ts);
  }
};

// One bias-corrected Adam update over aligned tensor lists. The step counter
// increments once per call.
inline void adam_step(const std::vector<DenseMatrix*>& params,
                      const std::vector<const DenseMatrix*>& grads, AdamState& st, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw DimensionError("adam_step: tensor list size mismatch");
  st.t += 1;
  const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseMatrix& theta = *params[i];
    const DenseMatrix& g = *grads[i];
    DenseMatrix& m = st.m[i];
    DenseMatrix& v = st.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m.v[k] = beta1 * m.v[k] + (1.0 - beta1) * g.v[k];
      v.v[k] = beta2 * v.v[k] + (1.0 - beta2) * g.v[k] * g.v[k];
      theta.v[k] -= lr * (m.v[k] / corr1) / (std::sqrt(v.v[k] / corr2) + eps);
    }
  }
}

inline void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& st, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  std::vector<DenseMatrix*> pt;
  std::vector<const DenseMatrix*> gt;
  for_each_tensor(params, [&pt](const char*, DenseMatrix& m) { pt.push_back(&m); });
  for_each_tensor(const_cast<ModelGrads&>(grads),
                  [&gt](const char*, const DenseMatrix& m) { gt.push_back(&m); });
  adam_step(pt, gt, st, lr, beta1, beta2, eps);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class BiasMode { Auto, On, Off };

// With a sigmoid-family activation the fixed zero basket initialization is
// lifted by sigma(0) != 0 after one layer; with leaky-relu it is a fixed
// point, so Auto turns trainable biases on to break out of it.
inline bool resolve_biases(BiasMode mode, Activation act) {
  switch (mode) {
    case BiasMode::On:
      return true;
    case BiasMode::Off:
      return false;
    case BiasMode::Auto:
      return act == Activation::LeakyRelu;
  }
  return false;
}

inline const std::vector<double>& reference_lr_grid() {
  static const std::vector<double> grid = {1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3};
  return grid;
}

struct TrainConfig {
  int dim = 64;
  int n_layers = 3;
  double learning_rate = 5e-4;
  double lambda_reg = 1e-5;
  int batch_size = 1024;
  int epochs = 50;
  int patience = 10;  // early-stop patience in epochs; 0 disables
  int eval_k = 100;
  std::uint64_t seed = 42;
  Activation activation = Activation::Sigmoid;
  BiasMode bias_mode = BiasMode::Auto;
  bool hadamard_first = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct EpochStats {
  int epoch = 0;         // 1-based
  double mean_loss = 0;  // mean per-batch loss
  double val_recall = 0, val_ndcg = 0, val_hr = 0;
  std::size_t val_baskets = 0;
  double wall_s = 0;  // excluded from deterministic-mode logs
};

struct TrainResult {
  ModelParams params;  // best-validation parameters (last epoch if no validation)
  AdamState adam;      // optimizer state at the end of training
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 0 = never improved / no validation
  double best_val_recall = 0.0;
};

// Optional warm start for resuming an interrupted run.
struct TrainInit {
  ModelParams params;
  AdamState adam;
  int start_epoch = 0;  // epochs already completed
};

// Called after each epoch with the fresh stats and the current parameters.
using EpochCallback =
    std::function<void(const EpochStats&, const ModelParams&, const AdamState&, bool is_best)>;

inline RankingMetrics validation_metrics(const ConvContext& ctx, const ModelParams& params,
                                         const SplitResult& split, int k) {
  const LayerEmbeddings emb = forward(ctx, params);
  const OutputEmbeddings out = concat_output(emb);
  return evaluate(basconv_scorer(out, ctx.owner), split, k, EvalTarget::Validation);
}

// Full training run: Xavier init (or warm start), per epoch
// ceil(|training edges| / batch_size) batches of sampled triplets, a forward
// and exact backward per batch, one Adam step per batch, then validation
// Recall@k on the masked items. The best-validation parameters are retained.
inline TrainResult train(const SplitResult& split, const TrainConfig& cfg,
                         const EpochCallback& callback = nullptr,
                         const TrainInit* init = nullptr) {
  const UbiGraph& g = split.train_graph;
  const ConvContext ctx = ConvContext::build(g);
  const bool use_biases = resolve_biases(cfg.bias_mode, cfg.activation);

  RngStream init_rng(cfg.seed);
  TrainResult res;
  AdamState adam;
  long long step = 0;
  int start_epoch = 0;
  if (init) {
    res.params = init->params;
    adam = init->adam;
    step = adam.t;
    start_epoch = init->start_epoch;
  } else {
    res.params = ModelParams::init(g.n_users, g.n_items, cfg.dim, cfg.n_layers, cfg.activation,
                                   use_biases, cfg.hadamard_first, init_rng);
    adam = AdamState::for_params(res.params);
  }

  bool has_validation = false;
  for (const auto& m : split.masked)
    if (!m.empty()) {
      has_validation = true;
      break;
    }

  const std::size_t n_edges = g.n_edges_bi();
  const int steps_per_epoch =
      static_cast<int>((n_edges + static_cast<std::size_t>(cfg.batch_size) - 1) /
                       static_cast<std::size_t>(cfg.batch_size));

  RngStream sampler = RngStream(cfg.seed).fork(0x73616d70ULL);  // "samp"
  ModelParams best = res.params;
  int since_best = 0;

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const auto triplets = sample_triplets(split, cfg.batch_size, sampler);
      BatchGrads bg = backward(ctx, res.params, triplets, cfg.lambda_reg, step);
      if (!std::isfinite(bg.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      adam_step(res.params, bg.grads, adam, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps);
      loss_sum += bg.loss;
      ++step;
    }

    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = loss_sum / steps_per_epoch;
    if (has_validation) {
      const RankingMetrics vm = validation_metrics(ctx, res.params, split, cfg.eval_k);
      st.val_recall = vm.recall;
      st.val_ndcg = vm.ndcg;
      st.val_hr = vm.hr;
      st.val_baskets = vm.n_baskets;
    }
    st.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bool is_best = false;
    if (has_validation) {
      if (st.val_recall > res.best_val_recall || res.best_epoch == 0) {
        res.best_val_recall = st.val_recall;
        res.best_epoch = epoch;
        best = res.params;
        since_best = 0;
        is_best = true;
      } else {
        ++since_best;
      }
    }
    res.history.push_back(st);
    if (callback) callback(st, res.params, adam, is_best);
    if (has_validation && cfg.patience > 0 && since_best >= cfg.patience) break;
  }

  if (has_validation && res.best_epoch > 0) res.params = std::move(best);
  res.adam = std::move(adam);
  return res;
}

}  // namespace basconv
