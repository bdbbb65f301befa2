#include <gtest/gtest.h>

#include <cmath>

#include "basconv/checkpoint.hpp"
#include "basconv/model.hpp"
#include "support/test_util.hpp"

using namespace basconv;
using testutil::max_abs_diff;

namespace {

DenseMatrix make(int r, int c, std::initializer_list<double> xs) {
  DenseMatrix m(r, c);
  std::copy(xs.begin(), xs.end(), m.v.begin());
  return m;
}

// 2 users, 2 baskets, 3 items
UbiGraph tiny_graph() { return UbiGraph::from_edges(2, {0, 1}, {{0, 1}, {0, 2}}, 3); }

ModelParams zero_weight_params(const UbiGraph& g, int dim, int layers, Activation act) {
  ModelParams p;
  p.dim = dim;
  p.activation = act;
  p.e_u0 = DenseMatrix(g.n_users, dim);
  p.e_i0 = DenseMatrix(g.n_items, dim);
  p.layers.resize(static_cast<std::size_t>(layers));
  for (auto& l : p.layers) {
    l.w_sp = DenseMatrix(dim, dim);
    l.w_ub = DenseMatrix(dim, dim);
    l.w_ui = DenseMatrix(dim, dim);
    l.w_ib = DenseMatrix(dim, dim);
  }
  return p;
}

}  // namespace

TEST(SelfPropagate, IdentityZeroAndOracle) {
  RngStream rng(1);
  DenseMatrix e = xavier_init(3, 2, rng);
  EXPECT_EQ(self_propagate(e, DenseMatrix::identity(2)).v, e.v);
  EXPECT_EQ(self_propagate(e, DenseMatrix(2, 2)).v, DenseMatrix(3, 2).v);
  DenseMatrix w = xavier_init(2, 2, rng);
  EXPECT_LE(max_abs_diff(self_propagate(e, w), testutil::matmul_oracle(e, w)), 1e-12);
}

TEST(Interact, AnnihilatorAndHandCase) {
  DenseMatrix agg = make(1, 2, {1, 2});
  DenseMatrix self = make(1, 2, {3, 4});
  EXPECT_EQ(interact(agg, DenseMatrix(1, 2), DenseMatrix::identity(2)).v, DenseMatrix(1, 2).v);
  EXPECT_EQ(interact(agg, self, DenseMatrix::identity(2)).v, make(1, 2, {3, 8}).v);
}

TEST(Interact, MatchesPerNodeSummation) {
  // one node with three neighbors: interact on the normalized aggregation
  // must equal the explicit sum of per-neighbor hadamard terms over p
  RngStream rng(2);
  const int d = 4;
  DenseMatrix neighbors = xavier_init(3, d, rng);
  DenseMatrix self = xavier_init(1, d, rng);
  DenseMatrix w = xavier_init(d, d, rng);

  CsrMatrix rel = normalize_rows(CsrMatrix::from_rows(1, 3, {{0, 1, 2}}));
  DenseMatrix got = interact(spmm(rel, neighbors), self, w);

  DenseMatrix acc(1, d);
  for (int nb = 0; nb < 3; ++nb) {
    DenseMatrix row(1, d);
    for (int k = 0; k < d; ++k) row(0, k) = neighbors(nb, k) * self(0, k);
    add_inplace(acc, matmul(row, w));
  }
  DenseMatrix expect = scale(acc, 1.0 / 3.0);
  EXPECT_LE(max_abs_diff(got, expect), 1e-12);
}

TEST(BasketUpdate, ZeroBasketsGiveConstantHalf) {
  const UbiGraph g = tiny_graph();
  const ConvContext ctx = ConvContext::build(g);
  RngStream rng(3);
  ModelParams p = ModelParams::init(g.n_users, g.n_items, 3, 1, Activation::Sigmoid, false, true, rng);
  DenseMatrix eb0(g.n_baskets, 3);
  DenseMatrix out = basket_update(ctx, p.e_u0, eb0, p.e_i0, p.layers[0], Activation::Sigmoid);
  for (double x : out.v) EXPECT_EQ(x, 0.5);
}

TEST(BasketUpdate, SingleBasketIdentityWeights) {
  // one user owning one basket {i0}: row = sigma(e_b + e_u*e_b + e_i*e_b)
  const UbiGraph g = UbiGraph::from_edges(1, {0}, {{0}}, 1);
  const ConvContext ctx = ConvContext::build(g);
  const int d = 3;
  LayerParams lp;
  lp.w_sp = DenseMatrix::identity(d);
  lp.w_ub = DenseMatrix::identity(d);
  lp.w_ui = DenseMatrix::identity(d);
  lp.w_ib = DenseMatrix::identity(d);
  RngStream rng(4);
  DenseMatrix eu = xavier_init(1, d, rng), eb = xavier_init(1, d, rng), ei = xavier_init(1, d, rng);
  DenseMatrix out = basket_update(ctx, eu, eb, ei, lp, Activation::Sigmoid);
  for (int k = 0; k < d; ++k) {
    const double h = eb(0, k) + eu(0, k) * eb(0, k) + ei(0, k) * eb(0, k);
    EXPECT_NEAR(out(0, k), 1.0 / (1.0 + std::exp(-h)), 1e-12);
  }
}

TEST(BasketUpdate, AllZeroWeights) {
  const UbiGraph g = tiny_graph();
  const ConvContext ctx = ConvContext::build(g);
  const ModelParams p = zero_weight_params(g, 2, 1, Activation::Sigmoid);
  RngStream rng(5);
  DenseMatrix eu = xavier_init(g.n_users, 2, rng), eb = xavier_init(g.n_baskets, 2, rng),
              ei = xavier_init(g.n_items, 2, rng);
  DenseMatrix out = basket_update(ctx, eu, eb, ei, p.layers[0], Activation::Sigmoid);
  for (double x : out.v) EXPECT_EQ(x, 0.5);
}

TEST(UserUpdate, TwoBasketMeanAndZeroDegree) {
  // user 0 owns baskets 0,1; basket term with identity w_ub and all other
  // weights zero: sigma(((x+y)/2) * e_u)
  const UbiGraph g = UbiGraph::from_edges(2, {0, 0}, {{0}, {1}}, 2);
  const ConvContext ctx = ConvContext::build(g);
  const int d = 2;
  LayerParams lp;
  lp.w_sp = DenseMatrix(d, d);
  lp.w_ub = DenseMatrix::identity(d);
  lp.w_ui = DenseMatrix(d, d);
  lp.w_ib = DenseMatrix(d, d);
  RngStream rng(6);
  DenseMatrix eu = xavier_init(g.n_users, d, rng);
  DenseMatrix eb = xavier_init(g.n_baskets, d, rng);
  DenseMatrix ei = xavier_init(g.n_items, d, rng);
  DenseMatrix out = user_update(ctx, eu, eb, ei, lp, Activation::Sigmoid);
  for (int k = 0; k < d; ++k) {
    const double h = 0.5 * (eb(0, k) + eb(1, k)) * eu(0, k);
    EXPECT_NEAR(out(0, k), 1.0 / (1.0 + std::exp(-h)), 1e-12);
  }
  // user 1 owns nothing: all terms zero
  for (int k = 0; k < d; ++k) EXPECT_EQ(out(1, k), 0.5);
}

TEST(UserUpdate, ZeroBasketLayerLeavesOnlySelfAndItems) {
  const UbiGraph g = tiny_graph();
  const ConvContext ctx = ConvContext::build(g);
  RngStream rng(7);
  ModelParams p = ModelParams::init(g.n_users, g.n_items, 3, 1, Activation::Sigmoid, false, true, rng);
  DenseMatrix eb0(g.n_baskets, 3);
  DenseMatrix with_baskets = user_update(ctx, p.e_u0, eb0, p.e_i0, p.layers[0], Activation::Sigmoid);
  // recompute dropping the basket term entirely
  DenseMatrix h = self_propagate(p.e_u0, p.layers[0].w_sp);
  add_inplace(h, interact(spmm(ctx.nui, p.e_i0), p.e_u0, p.layers[0].w_ui));
  EXPECT_LE(max_abs_diff(with_baskets, activation(h, Activation::Sigmoid)), 1e-15);
}

TEST(ItemUpdate, DegreeOneNeighborsAndZeroWeights) {
  // item 0 sits in exactly one basket of one user
  const UbiGraph g = UbiGraph::from_edges(1, {0}, {{0}}, 1);
  const ConvContext ctx = ConvContext::build(g);
  const int d = 2;
  LayerParams lp;
  lp.w_sp = DenseMatrix(d, d);
  lp.w_ub = DenseMatrix(d, d);
  lp.w_ui = DenseMatrix::identity(d);
  lp.w_ib = DenseMatrix(d, d);
  RngStream rng(8);
  DenseMatrix eu = xavier_init(1, d, rng), eb = xavier_init(1, d, rng), ei = xavier_init(1, d, rng);
  DenseMatrix out = item_update(ctx, eu, eb, ei, lp, Activation::Sigmoid);
  for (int k = 0; k < d; ++k) {
    const double h = eu(0, k) * ei(0, k);  // single neighbor, degree 1
    EXPECT_NEAR(out(0, k), 1.0 / (1.0 + std::exp(-h)), 1e-12);
  }

  const ModelParams zp = zero_weight_params(g, d, 1, Activation::Sigmoid);
  DenseMatrix zout = item_update(ctx, eu, eb, ei, zp.layers[0], Activation::Sigmoid);
  for (double x : zout.v) EXPECT_EQ(x, 0.5);
}

TEST(Forward, ZeroWeightsSigmoid) {
  const UbiGraph g = tiny_graph();
  const ModelParams p = zero_weight_params(g, 2, 1, Activation::Sigmoid);
  const LayerEmbeddings e = forward(g, p);
  for (double x : e.users[1].v) EXPECT_EQ(x, 0.5);
  for (double x : e.baskets[1].v) EXPECT_EQ(x, 0.5);
  for (double x : e.items[1].v) EXPECT_EQ(x, 0.5);
}

TEST(Forward, MatchesPerNodeReference) {
  RngStream rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const UbiGraph g = testutil::random_graph(rng);
    for (bool hf : {true, false}) {
      for (Activation act : {Activation::Sigmoid, Activation::LeakyRelu}) {
        const ModelParams p = testutil::random_params(g, 3, 2, act, act == Activation::LeakyRelu,
                                                      hf, 1000 + static_cast<std::uint64_t>(rep));
        const LayerEmbeddings got = forward(g, p);
        const LayerEmbeddings ref = testutil::per_node_forward(g, p);
        for (int l = 0; l <= 2; ++l) {
          EXPECT_LE(max_abs_diff(got.users[static_cast<std::size_t>(l)], ref.users[static_cast<std::size_t>(l)]), 1e-10);
          EXPECT_LE(max_abs_diff(got.baskets[static_cast<std::size_t>(l)], ref.baskets[static_cast<std::size_t>(l)]), 1e-10);
          EXPECT_LE(max_abs_diff(got.items[static_cast<std::size_t>(l)], ref.items[static_cast<std::size_t>(l)]), 1e-10);
        }
      }
    }
  }
}

TEST(Forward, RelabelingEquivariance) {
  RngStream rng(10);
  const UbiGraph g = UbiGraph::from_edges(3, {0, 1, 1, 2}, {{0, 1}, {1, 2}, {0, 3}, {2, 3}}, 4);
  const ModelParams p = testutil::random_params(g, 3, 2, Activation::Sigmoid, false, true, 77);

  // permutations of each vertex class
  const std::vector<int> pu = {2, 0, 1};          // new index of user u
  const std::vector<int> pb = {1, 3, 0, 2};
  const std::vector<int> pi = {3, 2, 1, 0};

  std::vector<int> owner2(4);
  std::vector<std::vector<int>> items2(4);
  for (int b = 0; b < 4; ++b) {
    owner2[static_cast<std::size_t>(pb[static_cast<std::size_t>(b)])] =
        pu[static_cast<std::size_t>(g.owner[static_cast<std::size_t>(b)])];
    for (int i : g.basket_items[static_cast<std::size_t>(b)])
      items2[static_cast<std::size_t>(pb[static_cast<std::size_t>(b)])].push_back(pi[static_cast<std::size_t>(i)]);
  }
  const UbiGraph g2 = UbiGraph::from_edges(3, owner2, items2, 4);

  ModelParams p2 = p;
  for (int u = 0; u < 3; ++u)
    for (int k = 0; k < 3; ++k) p2.e_u0(pu[static_cast<std::size_t>(u)], k) = p.e_u0(u, k);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) p2.e_i0(pi[static_cast<std::size_t>(i)], k) = p.e_i0(i, k);

  const LayerEmbeddings e1 = forward(g, p);
  const LayerEmbeddings e2 = forward(g2, p2);
  for (int l = 0; l <= 2; ++l)
    for (int b = 0; b < 4; ++b)
      for (int k = 0; k < 3; ++k)
        EXPECT_NEAR(e2.baskets[static_cast<std::size_t>(l)](pb[static_cast<std::size_t>(b)], k),
                    e1.baskets[static_cast<std::size_t>(l)](b, k), 1e-12);
}

TEST(ZeroTrap, LeakyReluWithoutBiasesFreezesBaskets) {
  const UbiGraph g = tiny_graph();
  const ModelParams p =
      testutil::random_params(g, 4, 3, Activation::LeakyRelu, /*use_biases=*/false, true, 11);
  const LayerEmbeddings e = forward(g, p);
  for (int l = 0; l <= 3; ++l)
    for (double x : e.baskets[static_cast<std::size_t>(l)].v) EXPECT_EQ(x, 0.0);
}

TEST(ZeroTrap, SigmoidLiftsToHalf) {
  const UbiGraph g = tiny_graph();
  const ModelParams p = testutil::random_params(g, 4, 2, Activation::Sigmoid, false, true, 12);
  const LayerEmbeddings e = forward(g, p);
  for (double x : e.baskets[0].v) EXPECT_EQ(x, 0.0);
  for (double x : e.baskets[1].v) EXPECT_EQ(x, 0.5);
}

TEST(ConcatOutput, WidthsBlocksAndSlices) {
  const UbiGraph g = tiny_graph();
  const ModelParams p = testutil::random_params(g, 2, 1, Activation::Sigmoid, false, true, 13);
  const LayerEmbeddings e = forward(g, p);
  const OutputEmbeddings out = concat_output(e);
  EXPECT_EQ(out.width(), 4);  // d * (L+1)
  for (int b = 0; b < g.n_baskets; ++b)
    for (int k = 0; k < 2; ++k) EXPECT_EQ(out.baskets(b, k), 0.0);
  // slices reproduce the source layers
  for (int l = 0; l <= 1; ++l)
    for (int u = 0; u < g.n_users; ++u)
      for (int k = 0; k < 2; ++k)
        EXPECT_EQ(out.users(u, l * 2 + k), e.users[static_cast<std::size_t>(l)](u, k));
}

TEST(Score, HandCasesAndOracle) {
  OutputEmbeddings out;
  out.users = make(1, 2, {1, 0});
  out.baskets = make(1, 2, {0, 1});
  out.items = make(1, 2, {1, 1});
  const std::vector<int> owner = {0};
  EXPECT_DOUBLE_EQ(score(out, owner, 0, 0), 2.0);

  out.items = DenseMatrix(1, 2);
  EXPECT_DOUBLE_EQ(score(out, owner, 0, 0), 0.0);

  RngStream rng(14);
  out.users = xavier_init(2, 6, rng);
  out.baskets = xavier_init(3, 6, rng);
  out.items = xavier_init(4, 6, rng);
  const std::vector<int> owner2 = {0, 1, 0};
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 4; ++i) {
      double expect = 0.0;
      for (int k = 0; k < 6; ++k)
        expect += (out.users(owner2[static_cast<std::size_t>(b)], k) + out.baskets(b, k)) * out.items(i, k);
      EXPECT_NEAR(score(out, owner2, b, i), expect, 1e-12);
    }
  EXPECT_THROW(score(out, owner2, 5, 0), DimensionError);
}

TEST(Params, CountPerLayerIsFourDSquared) {
  const UbiGraph g = tiny_graph();
  const int d = 5;
  const ModelParams p = testutil::random_params(g, d, 3, Activation::Sigmoid, false, true, 15);
  const std::size_t embedding = static_cast<std::size_t>(g.n_users + g.n_items) * d;
  EXPECT_EQ(p.n_parameters(), embedding + 3u * 4u * d * d);

  const ModelParams pb = testutil::random_params(g, d, 3, Activation::LeakyRelu, true, true, 15);
  EXPECT_EQ(pb.n_parameters(), embedding + 3u * (4u * d * d + d));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const UbiGraph g = tiny_graph();
  const ModelParams p = testutil::random_params(g, 3, 2, Activation::LeakyRelu, true, false, 16);
  AdamState adam = AdamState::for_params(p);
  adam.t = 17;
  RngStream rng(17);
  for (auto& m : adam.m)
    for (double& x : m.v) x = rng.uniform(-1, 1);

  testutil::TempDir tmp("ckpt");
  CheckpointMeta meta;
  meta.graph_fingerprint = g.fingerprint();
  meta.config_hash = "deadbeef00000000";
  meta.seed = 4;
  meta.epoch = 9;
  save_model_checkpoint(tmp.file("m.bcv"), p, meta, &adam);

  const LoadedModelCheckpoint lc = load_model_checkpoint(tmp.file("m.bcv"));
  EXPECT_EQ(lc.params.dim, p.dim);
  EXPECT_EQ(lc.params.activation, p.activation);
  EXPECT_EQ(lc.params.use_biases, true);
  EXPECT_EQ(lc.params.hadamard_first, false);
  EXPECT_EQ(lc.params.e_u0.v, p.e_u0.v);
  EXPECT_EQ(lc.params.layers[1].w_ui.v, p.layers[1].w_ui.v);
  EXPECT_EQ(lc.params.layers[0].bias.v, p.layers[0].bias.v);
  EXPECT_EQ(lc.meta.graph_fingerprint, g.fingerprint());
  EXPECT_EQ(lc.meta.config_hash, "deadbeef00000000");
  EXPECT_EQ(lc.meta.epoch, 9);
  ASSERT_TRUE(lc.has_adam);
  EXPECT_EQ(lc.adam.t, 17);
  EXPECT_EQ(lc.adam.m[0].v, adam.m[0].v);

  EXPECT_THROW(load_mf_checkpoint(tmp.file("m.bcv")), DataError);
}
