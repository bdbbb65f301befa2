#pragma once

#include <string>
#include <vector>

#include "basconv/graph.hpp"
#include "basconv/matrix.hpp"

namespace basconv {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// Per-layer trainable weights. w_sp is shared by the user, basket and item
// aggregators of the layer; w_ub / w_ui / w_ib are shared between the two
// node types on each side of their relation. bias is a 1 x d row added to
// every pre-activation of the layer; empty when biases are disabled.
struct LayerParams {
  DenseMatrix w_sp, w_ub, w_ui, w_ib;
  DenseMatrix bias;
};

// Trainable state of the model. The layer-0 basket embedding matrix is not a
// parameter: it is the constant zero matrix (with a sigmoid-family activation
// the first convolution immediately lifts baskets to sigma(0)).
//
// hadamard_first selects the reading of the interactive layer:
//   true  (default): (neighbor_agg (*) self) * W
//   false          : neighbor_agg (*) (self * W)
// Both collapse per-node sums to the same matrix shape; they differ
// numerically and are kept switchable for comparison.
struct ModelParams {
  int dim = 0;
  Activation activation = Activation::Sigmoid;
  bool use_biases = false;
  bool hadamard_first = true;

  DenseMatrix e_u0, e_i0;
  std::vector<LayerParams> layers;

  int n_layers() const { return static_cast<int>(layers.size()); }

  // Xavier-initializes all trainables, drawing in a fixed documented order:
  // e_u0, e_i0, then per layer w_sp, w_ub, w_ui, w_ib, bias.
  static ModelParams init(int n_users, int n_items, int dim, int n_layers, Activation act,
                          bool use_biases, bool hadamard_first, RngStream& rng) {
    ModelParams p;
    p.dim = dim;
    p.activation = act;
    p.use_biases = use_biases;
    p.hadamard_first = hadamard_first;
    p.e_u0 = xavier_init(n_users, dim, rng);
    p.e_i0 = xavier_init(n_items, dim, rng);
    p.layers.resize(static_cast<std::size_t>(n_layers));
    for (auto& l : p.layers) {
      l.w_sp = xavier_init(dim, dim, rng);
      l.w_ub = xavier_init(dim, dim, rng);
      l.w_ui = xavier_init(dim, dim, rng);
      l.w_ib = xavier_init(dim, dim, rng);
      if (use_biases) l.bias = xavier_init(1, dim, rng);
    }
    return p;
  }

  // Trainable tensor count per layer: 4 d*d matrices (+ d bias entries).
  std::size_t n_parameters() const {
    std::size_t n = e_u0.size() + e_i0.size();
    for (const auto& l : layers)
      n += l.w_sp.size() + l.w_ub.size() + l.w_ui.size() + l.w_ib.size() + l.bias.size();
    return n;
  }
};

// Gradients (or Adam moments) shaped exactly like the trainables.
struct ModelGrads {
  DenseMatrix e_u0, e_i0;
  std::vector<LayerParams> layers;

  static ModelGrads zeros_like(const ModelParams& p) {
    ModelGrads g;
    g.e_u0 = DenseMatrix(p.e_u0.rows, p.e_u0.cols);
    g.e_i0 = DenseMatrix(p.e_i0.rows, p.e_i0.cols);
    g.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      g.layers[l].w_sp = DenseMatrix(p.dim, p.dim);
      g.layers[l].w_ub = DenseMatrix(p.dim, p.dim);
      g.layers[l].w_ui = DenseMatrix(p.dim, p.dim);
      g.layers[l].w_ib = DenseMatrix(p.dim, p.dim);
      if (p.use_biases) g.layers[l].bias = DenseMatrix(1, p.dim);
    }
    return g;
  }
};

// Flat (name, tensor) view over the trainables, in the fixed order used by
// the optimizer and the checkpoint format.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("e_u0", p.e_u0);
  fn("e_i0", p.e_i0);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string tag = "[" + std::to_string(l) + "]";
    fn(("w_sp" + tag).c_str(), p.layers[l].w_sp);
    fn(("w_ub" + tag).c_str(), p.layers[l].w_ub);
    fn(("w_ui" + tag).c_str(), p.layers[l].w_ui);
    fn(("w_ib" + tag).c_str(), p.layers[l].w_ib);
    if (!p.layers[l].bias.empty()) fn(("bias" + tag).c_str(), p.layers[l].bias);
  }
}

// ---------------------------------------------------------------------------
// Graph realization for convolution
// ---------------------------------------------------------------------------

// The six row-normalized relation matrices (D^-1 R, normalized by the degree
// of the node being updated) plus their transposes for backpropagation.
// nbu is the basket->owner matrix: every basket has degree one there, so its
// "aggregation" is exactly the owner's embedding.
struct ConvContext {
  int n_users = 0, n_baskets = 0, n_items = 0;
  std::vector<int> owner;

  CsrMatrix nub, nui;  // user rows
  CsrMatrix nbu, nbi;  // basket rows
  CsrMatrix niu, nib;  // item rows
  CsrMatrix nub_t, nui_t, nbu_t, nbi_t, niu_t, nib_t;

  static ConvContext build(const UbiGraph& g) {
    ConvContext c;
    c.n_users = g.n_users;
    c.n_baskets = g.n_baskets;
    c.n_items = g.n_items;
    c.owner = g.owner;
    const CsrMatrix rub = interaction_matrix(g, Relation::UserBasket);
    const CsrMatrix rbi = interaction_matrix(g, Relation::BasketItem);
    const CsrMatrix rui = interaction_matrix(g, Relation::UserItem);
    c.nub = normalize_rows(rub);
    c.nui = normalize_rows(rui);
    c.nbu = normalize_rows(csr_transpose(rub));
    c.nbi = normalize_rows(rbi);
    c.niu = normalize_rows(csr_transpose(rui));
    c.nib = normalize_rows(csr_transpose(rbi));
    c.nub_t = csr_transpose(c.nub);
    c.nui_t = csr_transpose(c.nui);
    c.nbu_t = csr_transpose(c.nbu);
    c.nbi_t = csr_transpose(c.nbi);
    c.niu_t = csr_transpose(c.niu);
    c.nib_t = csr_transpose(c.nib);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Aggregators
// ---------------------------------------------------------------------------

// Self-propagation: E * W_sp.
inline DenseMatrix self_propagate(const DenseMatrix& e, const DenseMatrix& w_sp) {
  return matmul(e, w_sp);
}

// Interactive layer on an already degree-normalized neighbor aggregation
// (the 1/p factor is absorbed into the normalized relation matrix).
inline DenseMatrix interact(const DenseMatrix& neighbor_agg, const DenseMatrix& self_emb,
                            const DenseMatrix& w, bool hadamard_first = true) {
  if (hadamard_first) return matmul(hadamard(neighbor_agg, self_emb), w);
  return hadamard(neighbor_agg, matmul(self_emb, w));
}

namespace detail {

inline void add_bias_rows(DenseMatrix& h, const DenseMatrix& bias) {
  if (bias.empty()) return;
  for (int r = 0; r < h.rows; ++r) {
    double* row = h.row(r);
    for (int c = 0; c < h.cols; ++c) row[c] += bias.v[static_cast<std::size_t>(c)];
  }
}

}  // namespace detail

// Pre-activation of the basket aggregator:
//   E_b W_sp + (nbu E_u (*) E_b) W_ub + (nbi E_i (*) E_b) W_ib [+ bias].
inline DenseMatrix basket_preact(const ConvContext& ctx, const DenseMatrix& e_u,
                                 const DenseMatrix& e_b, const DenseMatrix& e_i,
                                 const LayerParams& lp, bool hadamard_first) {
  DenseMatrix h = self_propagate(e_b, lp.w_sp);
  add_inplace(h, interact(spmm(ctx.nbu, e_u), e_b, lp.w_ub, hadamard_first));
  add_inplace(h, interact(spmm(ctx.nbi, e_i), e_b, lp.w_ib, hadamard_first));
  detail::add_bias_rows(h, lp.bias);
  return h;
}

// Pre-activation of the user aggregator:
//   E_u W_sp + (nub E_b (*) E_u) W_ub + (nui E_i (*) E_u) W_ui [+ bias].
inline DenseMatrix user_preact(const ConvContext& ctx, const DenseMatrix& e_u,
                               const DenseMatrix& e_b, const DenseMatrix& e_i,
                               const LayerParams& lp, bool hadamard_first) {
  DenseMatrix h = self_propagate(e_u, lp.w_sp);
  add_inplace(h, interact(spmm(ctx.nub, e_b), e_u, lp.w_ub, hadamard_first));
  add_inplace(h, interact(spmm(ctx.nui, e_i), e_u, lp.w_ui, hadamard_first));
  detail::add_bias_rows(h, lp.bias);
  return h;
}

// Pre-activation of the item aggregator:
//   E_i W_sp + (niu E_u (*) E_i) W_ui + (nib E_b (*) E_i) W_ib [+ bias].
inline DenseMatrix item_preact(const ConvContext& ctx, const DenseMatrix& e_u,
                               const DenseMatrix& e_b, const DenseMatrix& e_i,
                               const LayerParams& lp, bool hadamard_first) {
  DenseMatrix h = self_propagate(e_i, lp.w_sp);
  add_inplace(h, interact(spmm(ctx.niu, e_u), e_i, lp.w_ui, hadamard_first));
  add_inplace(h, interact(spmm(ctx.nib, e_b), e_i, lp.w_ib, hadamard_first));
  detail::add_bias_rows(h, lp.bias);
  return h;
}

inline DenseMatrix basket_update(const ConvContext& ctx, const DenseMatrix& e_u,
                                 const DenseMatrix& e_b, const DenseMatrix& e_i,
                                 const LayerParams& lp, Activation act, bool hadamard_first = true) {
  return activation(basket_preact(ctx, e_u, e_b, e_i, lp, hadamard_first), act);
}

inline DenseMatrix user_update(const ConvContext& ctx, const DenseMatrix& e_u,
                               const DenseMatrix& e_b, const DenseMatrix& e_i,
                               const LayerParams& lp, Activation act, bool hadamard_first = true) {
  return activation(user_preact(ctx, e_u, e_b, e_i, lp, hadamard_first), act);
}

inline DenseMatrix item_update(const ConvContext& ctx, const DenseMatrix& e_u,
                               const DenseMatrix& e_b, const DenseMatrix& e_i,
                               const LayerParams& lp, Activation act, bool hadamard_first = true) {
  return activation(item_preact(ctx, e_u, e_b, e_i, lp, hadamard_first), act);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

// Embeddings of all node types at layers 0..L.
struct LayerEmbeddings {
  std::vector<DenseMatrix> users, baskets, items;

  int n_layers() const { return static_cast<int>(users.size()) - 1; }
};

// Intermediates kept for backpropagation: per layer, the pre-activations and
// the six neighbor aggregations.
struct ForwardTrace {
  std::vector<DenseMatrix> h_u, h_b, h_i;
  std::vector<DenseMatrix> a_ub, a_ui, a_bu, a_bi, a_iu, a_ib;
};

// Runs the L convolution layers. All layer-(l+1) embeddings are computed
// from layer-l values only; the three updates within a layer are mutually
// independent.
inline LayerEmbeddings forward(const ConvContext& ctx, const ModelParams& p,
                               ForwardTrace* trace = nullptr) {
  if (p.n_layers() < 1) throw ConfigError("model must have at least one layer");
  const int L = p.n_layers();
  LayerEmbeddings e;
  e.users.reserve(static_cast<std::size_t>(L) + 1);
  e.baskets.reserve(static_cast<std::size_t>(L) + 1);
  e.items.reserve(static_cast<std::size_t>(L) + 1);
  e.users.push_back(p.e_u0);
  e.baskets.emplace_back(ctx.n_baskets, p.dim);  // fixed all-zero initial baskets
  e.items.push_back(p.e_i0);

  for (int l = 0; l < L; ++l) {
    const DenseMatrix& eu = e.users[static_cast<std::size_t>(l)];
    const DenseMatrix& eb = e.baskets[static_cast<std::size_t>(l)];
    const DenseMatrix& ei = e.items[static_cast<std::size_t>(l)];
    const LayerParams& lp = p.layers[static_cast<std::size_t>(l)];

    DenseMatrix a_ub = spmm(ctx.nub, eb);
    DenseMatrix a_ui = spmm(ctx.nui, ei);
    DenseMatrix a_bu = spmm(ctx.nbu, eu);
    DenseMatrix a_bi = spmm(ctx.nbi, ei);
    DenseMatrix a_iu = spmm(ctx.niu, eu);
    DenseMatrix a_ib = spmm(ctx.nib, eb);

    DenseMatrix h_u = self_propagate(eu, lp.w_sp);
    add_inplace(h_u, interact(a_ub, eu, lp.w_ub, p.hadamard_first));
    add_inplace(h_u, interact(a_ui, eu, lp.w_ui, p.hadamard_first));
    detail::add_bias_rows(h_u, lp.bias);

    DenseMatrix h_b = self_propagate(eb, lp.w_sp);
    add_inplace(h_b, interact(a_bu, eb, lp.w_ub, p.hadamard_first));
    add_inplace(h_b, interact(a_bi, eb, lp.w_ib, p.hadamard_first));
    detail::add_bias_rows(h_b, lp.bias);

    DenseMatrix h_i = self_propagate(ei, lp.w_sp);
    add_inplace(h_i, interact(a_iu, ei, lp.w_ui, p.hadamard_first));
    add_inplace(h_i, interact(a_ib, ei, lp.w_ib, p.hadamard_first));
    detail::add_bias_rows(h_i, lp.bias);

    e.users.push_back(activation(h_u, p.activation));
    e.baskets.push_back(activation(h_b, p.activation));
    e.items.push_back(activation(h_i, p.activation));

    if (trace) {
      trace->a_ub.push_back(std::move(a_ub));
      trace->a_ui.push_back(std::move(a_ui));
      trace->a_bu.push_back(std::move(a_bu));
      trace->a_bi.push_back(std::move(a_bi));
      trace->a_iu.push_back(std::move(a_iu));
      trace->a_ib.push_back(std::move(a_ib));
      trace->h_u.push_back(std::move(h_u));
      trace->h_b.push_back(std::move(h_b));
      trace->h_i.push_back(std::move(h_i));
    }
  }
  return e;
}

inline LayerEmbeddings forward(const UbiGraph& g, const ModelParams& p) {
  return forward(ConvContext::build(g), p);
}

// ---------------------------------------------------------------------------
// Output embeddings and scoring
// ---------------------------------------------------------------------------

// Layer-concatenated output embeddings, width d * (L+1). The first d columns
// of the basket matrix are zero by construction.
struct OutputEmbeddings {
  DenseMatrix users, baskets, items;

  int width() const { return users.cols; }
};

namespace detail {

inline DenseMatrix concat_cols(const std::vector<DenseMatrix>& ms) {
  const int rows = ms.front().rows;
  int width = 0;
  for (const auto& m : ms) width += m.cols;
  DenseMatrix out(rows, width);
  for (int r = 0; r < rows; ++r) {
    double* orow = out.row(r);
    int off = 0;
    for (const auto& m : ms) {
      const double* mrow = m.row(r);
      std::copy(mrow, mrow + m.cols, orow + off);
      off += m.cols;
    }
  }
  return out;
}

}  // namespace detail

inline OutputEmbeddings concat_output(const LayerEmbeddings& e) {
  return {detail::concat_cols(e.users), detail::concat_cols(e.baskets),
          detail::concat_cols(e.items)};
}

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

// Prediction y(b, i) = e*_{owner(b)} . e*_i + e*_b . e*_i.
inline double score(const OutputEmbeddings& out, const std::vector<int>& owner, int b, int i) {
  if (b < 0 || b >= out.baskets.rows) throw DimensionError("score: basket index out of range");
  if (i < 0 || i >= out.items.rows) throw DimensionError("score: item index out of range");
  const int w = out.width();
  const double* ei = out.items.row(i);
  return dot(out.users.row(owner[static_cast<std::size_t>(b)]), ei, w) + dot(out.baskets.row(b), ei, w);
}

}  // namespace basconv
