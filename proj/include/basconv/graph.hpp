#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "basconv/common.hpp"
#include "basconv/matrix.hpp"

namespace basconv {

// ---------------------------------------------------------------------------
// Transaction logs
// ---------------------------------------------------------------------------

struct Transaction {
  std::string user;
  std::string basket;
  std::string item;
};

struct TransactionLog {
  std::vector<Transaction> records;  // deduplicated, in input order
  std::size_t n_raw = 0;             // rows before (basket, item) dedup
};

struct ColumnSpec {
  std::string user = "user_id";
  std::string basket = "basket_id";
  std::string item = "item_id";
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline int find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

}  // namespace detail

// Reads a delimiter-separated transaction file (comma or tab, auto-detected
// from the header row). Duplicate (basket, item) rows collapse to the first
// occurrence. A basket_id appearing under two different user_ids is a
// data-integrity error.
inline TransactionLog load_transactions(const std::string& path, const ColumnSpec& cols = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open transactions file: " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw ConfigError("transactions file is empty (no header): " + path);
  const char delim = header_line.find('\t') != std::string::npos ? '\t' : ',';
  const auto header = detail::split_line(header_line, delim);

  const int cu = detail::find_column(header, cols.user);
  const int cb = detail::find_column(header, cols.basket);
  const int ci = detail::find_column(header, cols.item);
  if (cu < 0) throw ConfigError("missing column '" + cols.user + "' in " + path);
  if (cb < 0) throw ConfigError("missing column '" + cols.basket + "' in " + path);
  if (ci < 0) throw ConfigError("missing column '" + cols.item + "' in " + path);

  TransactionLog log;
  std::unordered_map<std::string, std::string> basket_owner;
  std::unordered_set<std::string> seen_pairs;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto f = detail::split_line(line, delim);
    const std::size_t need = static_cast<std::size_t>(std::max({cu, cb, ci})) + 1;
    if (f.size() < need)
      throw DataError("line " + std::to_string(lineno) + ": expected at least " +
                      std::to_string(need) + " fields, got " + std::to_string(f.size()));
    const std::string& u = f[static_cast<std::size_t>(cu)];
    const std::string& b = f[static_cast<std::size_t>(cb)];
    const std::string& i = f[static_cast<std::size_t>(ci)];
    ++log.n_raw;

    auto [it, inserted] = basket_owner.emplace(b, u);
    if (!inserted && it->second != u)
      throw DataError("basket '" + b + "' appears under two users ('" + it->second + "' and '" + u + "')");

    if (seen_pairs.insert(b + '\x1f' + i).second) log.records.push_back({u, b, i});
  }
  if (log.records.empty())
    std::cerr << "warning: no transaction records in " << path << "\n";
  return log;
}

// ---------------------------------------------------------------------------
// The user-basket-item graph
// ---------------------------------------------------------------------------

// Dense-index <-> raw-id tables for one vertex class.
struct IdMap {
  std::vector<std::string> raw;                  // index -> raw id
  std::unordered_map<std::string, int> index;    // raw id -> index

  int add(const std::string& id) {
    auto [it, inserted] = index.emplace(id, static_cast<int>(raw.size()));
    if (inserted) raw.push_back(id);
    return it->second;
  }
  int lookup(const std::string& id) const {
    auto it = index.find(id);
    return it == index.end() ? -1 : it->second;
  }
  std::size_t size() const { return raw.size(); }
};

enum class Relation { UserBasket, BasketItem, UserItem };

// Tripartite graph over users, baskets and items. Every basket has exactly
// one owning user; user-item edges are derived (u,i) <=> u owns some basket
// containing i, over whatever basket-item edges the graph currently holds.
// Immutable once built; adjacency lists are sorted ascending.
struct UbiGraph {
  int n_users = 0;
  int n_baskets = 0;
  int n_items = 0;

  std::vector<int> owner;                        // basket -> user
  std::vector<std::vector<int>> user_baskets;    // N_b(u)
  std::vector<std::vector<int>> user_items;      // N_i(u), derived
  std::vector<std::vector<int>> basket_items;    // N_i(b)
  std::vector<std::vector<int>> item_baskets;    // N_b(i)
  std::vector<std::vector<int>> item_users;      // N_u(i), derived

  IdMap user_ids, basket_ids, item_ids;

  std::size_t n_edges_bi() const {
    std::size_t n = 0;
    for (const auto& v : basket_items) n += v.size();
    return n;
  }
  std::size_t n_edges_ui() const {
    std::size_t n = 0;
    for (const auto& v : user_items) n += v.size();
    return n;
  }

  // Hash over counts and raw ids in index order; checkpoints carry it so a
  // model trained on one graph is rejected against another.
  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a64("ubi");
    auto mix = [&h](const std::string& s) {
      h = fnv1a64(s, h);
      h = fnv1a64("\x1f", h);
    };
    mix(std::to_string(n_users));
    mix(std::to_string(n_baskets));
    mix(std::to_string(n_items));
    for (const auto& s : user_ids.raw) mix(s);
    for (const auto& s : basket_ids.raw) mix(s);
    for (const auto& s : item_ids.raw) mix(s);
    return h;
  }

  // Recomputes user_items/item_users and item_baskets from basket_items.
  void derive_edges() {
    user_items.assign(static_cast<std::size_t>(n_users), {});
    item_users.assign(static_cast<std::size_t>(n_items), {});
    item_baskets.assign(static_cast<std::size_t>(n_items), {});
    for (int b = 0; b < n_baskets; ++b)
      for (int i : basket_items[static_cast<std::size_t>(b)])
        item_baskets[static_cast<std::size_t>(i)].push_back(b);
    for (int u = 0; u < n_users; ++u) {
      auto& ui = user_items[static_cast<std::size_t>(u)];
      for (int b : user_baskets[static_cast<std::size_t>(u)])
        ui.insert(ui.end(), basket_items[static_cast<std::size_t>(b)].begin(),
                  basket_items[static_cast<std::size_t>(b)].end());
      std::sort(ui.begin(), ui.end());
      ui.erase(std::unique(ui.begin(), ui.end()), ui.end());
    }
    for (int i = 0; i < n_items; ++i) {
      auto& iu = item_users[static_cast<std::size_t>(i)];
      for (int b : item_baskets[static_cast<std::size_t>(i)]) iu.push_back(owner[static_cast<std::size_t>(b)]);
      std::sort(iu.begin(), iu.end());
      iu.erase(std::unique(iu.begin(), iu.end()), iu.end());
    }
  }

  // Builds a graph directly from owner and basket-item lists, minting
  // synthetic raw ids. Used by tests and by generated fixtures.
  static UbiGraph from_edges(int n_users, const std::vector<int>& owner,
                             std::vector<std::vector<int>> basket_items, int n_items) {
    UbiGraph g;
    g.n_users = n_users;
    g.n_baskets = static_cast<int>(owner.size());
    g.n_items = n_items;
    g.owner = owner;
    g.basket_items = std::move(basket_items);
    for (auto& v : g.basket_items) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    g.user_baskets.assign(static_cast<std::size_t>(n_users), {});
    for (int b = 0; b < g.n_baskets; ++b)
      g.user_baskets[static_cast<std::size_t>(g.owner[static_cast<std::size_t>(b)])].push_back(b);
    g.derive_edges();
    for (int u = 0; u < n_users; ++u) g.user_ids.add("u" + std::to_string(u));
    for (int b = 0; b < g.n_baskets; ++b) g.basket_ids.add("b" + std::to_string(b));
    for (int i = 0; i < n_items; ++i) g.item_ids.add("i" + std::to_string(i));
    return g;
  }
};

// Filters out baskets with fewer than min_basket_size distinct items, drops
// users/items left without edges, and numbers the surviving vertices by first
// appearance in the filtered log (so identical inputs give identical graphs).
inline UbiGraph build_ubi_graph(const TransactionLog& log, int min_basket_size) {
  if (min_basket_size < 1) throw ConfigError("min_basket_size must be >= 1");

  std::unordered_map<std::string, int> basket_size;
  {
    std::unordered_set<std::string> seen_pairs;
    for (const auto& r : log.records)
      if (seen_pairs.insert(r.basket + '\x1f' + r.item).second) ++basket_size[r.basket];
  }

  std::size_t dropped_baskets = 0;
  for (const auto& [_, n] : basket_size)
    if (n < min_basket_size) ++dropped_baskets;

  UbiGraph g;
  std::vector<std::vector<int>> basket_items;
  for (const auto& r : log.records) {
    if (basket_size[r.basket] < min_basket_size) continue;
    const int u = g.user_ids.add(r.user);
    const int b = g.basket_ids.add(r.basket);
    const int i = g.item_ids.add(r.item);
    if (b == static_cast<int>(basket_items.size())) {
      basket_items.emplace_back();
      g.owner.push_back(u);
    }
    basket_items[static_cast<std::size_t>(b)].push_back(i);
  }

  g.n_users = static_cast<int>(g.user_ids.size());
  g.n_baskets = static_cast<int>(g.basket_ids.size());
  g.n_items = static_cast<int>(g.item_ids.size());
  if (g.n_baskets == 0) {
    std::unordered_set<std::string> users, items;
    for (const auto& r : log.records) {
      users.insert(r.user);
      items.insert(r.item);
    }
    throw DataError("empty graph after filtering: dropped " + std::to_string(dropped_baskets) +
                    " baskets (< " + std::to_string(min_basket_size) + " items), " +
                    std::to_string(users.size()) + " users, " + std::to_string(items.size()) +
                    " items");
  }

  g.basket_items = std::move(basket_items);
  for (auto& v : g.basket_items) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());  // edges are binary
  }
  g.user_baskets.assign(static_cast<std::size_t>(g.n_users), {});
  for (int b = 0; b < g.n_baskets; ++b)
    g.user_baskets[static_cast<std::size_t>(g.owner[static_cast<std::size_t>(b)])].push_back(b);
  g.derive_edges();
  return g;
}

// Binary interaction matrix for one relation. Rows/entries follow the
// adjacency lists, so entries within a row are sorted by column.
inline CsrMatrix interaction_matrix(const UbiGraph& g, Relation rel) {
  switch (rel) {
    case Relation::UserBasket:
      return CsrMatrix::from_rows(g.n_users, g.n_baskets, g.user_baskets);
    case Relation::BasketItem:
      return CsrMatrix::from_rows(g.n_baskets, g.n_items, g.basket_items);
    case Relation::UserItem:
      return CsrMatrix::from_rows(g.n_users, g.n_items, g.user_items);
  }
  throw ConfigError("unknown relation");
}

// ---------------------------------------------------------------------------
// Within-basket splits
// ---------------------------------------------------------------------------

// Train/test/validation partition of a graph's basket-item edges.
//   train_graph: the input graph with held-out edges removed and user-item
//                edges re-derived from the training portion only.
//   heldout[b]:  test items of basket b (empty = basket not evaluated).
//   masked[b]:   validation items, drawn from b's training items; they stay
//                in train_graph and are ranked against the unmasked rest.
struct SplitResult {
  UbiGraph train_graph;
  std::vector<std::vector<int>> heldout;
  std::vector<std::vector<int>> masked;
  std::size_t dropped_eval_baskets = 0;  // baskets dropped by subsampling

  // b's full item set = training items + held-out items.
  bool in_full_basket(int b, int item) const {
    const auto& t = train_graph.basket_items[static_cast<std::size_t>(b)];
    if (std::binary_search(t.begin(), t.end(), item)) return true;
    const auto& h = heldout[static_cast<std::size_t>(b)];
    return std::binary_search(h.begin(), h.end(), item);
  }

  std::size_t n_eval_baskets() const {
    std::size_t n = 0;
    for (const auto& h : heldout) n += !h.empty();
    return n;
  }
};

namespace detail {

// ceil(n * frac) with a guard against the product landing a hair above an
// integer in floating point.
inline int split_point(int n, double frac) {
  return static_cast<int>(std::ceil(static_cast<double>(n) * frac - 1e-9));
}

// Partitions items into (kept, removed): shuffles, keeps ceil(n*frac). With
// require_both, repairs the cut so both sides are nonempty; otherwise a
// 1-item input yields (1, 0).
inline void split_items(std::vector<int> items, double frac, RngStream& rng, bool require_both,
                        std::vector<int>& kept, std::vector<int>& removed) {
  rng.shuffle(items);
  const int n = static_cast<int>(items.size());
  int cut = split_point(n, frac);
  if (cut < 1) cut = 1;
  if (require_both && cut >= n) cut = n - 1;
  if (cut > n) cut = n;
  kept.assign(items.begin(), items.begin() + cut);
  removed.assign(items.begin() + cut, items.end());
  std::sort(kept.begin(), kept.end());
  std::sort(removed.begin(), removed.end());
}

}  // namespace detail

// Returns a copy of g with basket-item lists replaced and derived edges
// recomputed. Vertex sets and id maps are untouched.
inline UbiGraph with_basket_items(const UbiGraph& g, std::vector<std::vector<int>> basket_items) {
  UbiGraph out = g;
  out.basket_items = std::move(basket_items);
  out.derive_edges();
  return out;
}

// Splits each basket's items: ceil(n * train_frac) for training, the rest
// held out, both sides guaranteed nonempty. A second, separately seeded pass
// over the training items marks the masked validation subset (where the
// training side has >= 2 items).
inline SplitResult split_within_basket(const UbiGraph& g, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw ConfigError("train_frac must be in (0, 1), got " + std::to_string(train_frac));
  for (int b = 0; b < g.n_baskets; ++b)
    if (g.basket_items[static_cast<std::size_t>(b)].size() < 2)
      throw DataError("basket '" + g.basket_ids.raw[static_cast<std::size_t>(b)] +
                      "' has a single item and cannot be split; rebuild with min_basket_size >= 2");

  SplitResult split;
  split.heldout.assign(static_cast<std::size_t>(g.n_baskets), {});
  split.masked.assign(static_cast<std::size_t>(g.n_baskets), {});
  std::vector<std::vector<int>> train_items(static_cast<std::size_t>(g.n_baskets));

  RngStream rng(seed);
  for (int b = 0; b < g.n_baskets; ++b)
    detail::split_items(g.basket_items[static_cast<std::size_t>(b)], train_frac, rng,
                        /*require_both=*/true, train_items[static_cast<std::size_t>(b)],
                        split.heldout[static_cast<std::size_t>(b)]);

  RngStream mask_rng = RngStream(seed).fork(/*tag=*/0x6d61736bULL);  // "mask"
  for (int b = 0; b < g.n_baskets; ++b) {
    const auto& t = train_items[static_cast<std::size_t>(b)];
    if (t.size() < 2) continue;  // nothing left to mask; basket skipped in validation
    std::vector<int> unmasked;
    detail::split_items(t, train_frac, mask_rng, /*require_both=*/true, unmasked,
                        split.masked[static_cast<std::size_t>(b)]);
  }

  split.train_graph = with_basket_items(g, std::move(train_items));
  return split;
}

// Uniformly keeps ceil(fraction * |training edges|) training edges. Held-out
// sets are unchanged except that a basket losing all its training items is
// dropped from evaluation (counted in dropped_eval_baskets).
inline SplitResult subsample_training(const SplitResult& split, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("subsample fraction must be in (0, 1], got " + std::to_string(fraction));
  if (fraction == 1.0) return split;

  const UbiGraph& g = split.train_graph;
  std::vector<std::pair<int, int>> edges;
  edges.reserve(g.n_edges_bi());
  for (int b = 0; b < g.n_baskets; ++b)
    for (int i : g.basket_items[static_cast<std::size_t>(b)]) edges.emplace_back(b, i);

  RngStream rng(seed);
  rng.shuffle(edges);
  const int keep = detail::split_point(static_cast<int>(edges.size()), fraction);

  std::vector<std::vector<int>> kept(static_cast<std::size_t>(g.n_baskets));
  for (int k = 0; k < keep; ++k) kept[static_cast<std::size_t>(edges[static_cast<std::size_t>(k)].first)].push_back(edges[static_cast<std::size_t>(k)].second);
  for (auto& v : kept) std::sort(v.begin(), v.end());

  SplitResult out;
  out.heldout = split.heldout;
  out.masked.assign(static_cast<std::size_t>(g.n_baskets), {});
  for (int b = 0; b < g.n_baskets; ++b) {
    const auto& kb = kept[static_cast<std::size_t>(b)];
    if (kb.empty()) {
      if (!out.heldout[static_cast<std::size_t>(b)].empty()) {
        out.heldout[static_cast<std::size_t>(b)].clear();
        ++out.dropped_eval_baskets;
      }
      continue;
    }
    // masked validation items must still be training edges
    for (int i : split.masked[static_cast<std::size_t>(b)])
      if (std::binary_search(kb.begin(), kb.end(), i)) out.masked[static_cast<std::size_t>(b)].push_back(i);
  }
  out.train_graph = with_basket_items(g, std::move(kept));
  return out;
}

// ---------------------------------------------------------------------------
// Summaries and exports
// ---------------------------------------------------------------------------

// degree -> count, sorted by degree.
inline std::vector<std::pair<int, int>> degree_histogram(const std::vector<std::vector<int>>& adj) {
  std::unordered_map<int, int> h;
  for (const auto& v : adj) ++h[static_cast<int>(v.size())];
  std::vector<std::pair<int, int>> out(h.begin(), h.end());
  std::sort(out.begin(), out.end());
  return out;
}

// One edge per line: type <TAB> raw src id <TAB> raw dst id, in index order.
inline void export_edges(const UbiGraph& g, std::ostream& os, bool include_derived_ui) {
  for (int b = 0; b < g.n_baskets; ++b)
    os << "ub\t" << g.user_ids.raw[static_cast<std::size_t>(g.owner[static_cast<std::size_t>(b)])] << '\t'
       << g.basket_ids.raw[static_cast<std::size_t>(b)] << '\n';
  for (int b = 0; b < g.n_baskets; ++b)
    for (int i : g.basket_items[static_cast<std::size_t>(b)])
      os << "bi\t" << g.basket_ids.raw[static_cast<std::size_t>(b)] << '\t'
         << g.item_ids.raw[static_cast<std::size_t>(i)] << '\n';
  if (include_derived_ui)
    for (int u = 0; u < g.n_users; ++u)
      for (int i : g.user_items[static_cast<std::size_t>(u)])
        os << "ui\t" << g.user_ids.raw[static_cast<std::size_t>(u)] << '\t'
           << g.item_ids.raw[static_cast<std::size_t>(i)] << '\n';
}

// Graph persistence format: the edge list preceded by vu/vb/vi vertex lines
// that pin the dense numbering, so any graph round-trips to an identical one
// (not merely an isomorphic one) and keeps its fingerprint.
inline void export_graph(const UbiGraph& g, std::ostream& os) {
  for (const auto& s : g.user_ids.raw) os << "vu\t" << s << '\n';
  for (const auto& s : g.basket_ids.raw) os << "vb\t" << s << '\n';
  for (const auto& s : g.item_ids.raw) os << "vi\t" << s << '\n';
  export_edges(g, os, /*include_derived_ui=*/false);
}

// Rebuilds a graph from an exported edge list (derived ui lines are ignored).
// Optional vu/vb/vi preamble lines pin vertex numbering; otherwise vertices
// are numbered by first appearance, which reproduces the numbering of any
// graph that was built from a transaction log and exported in index order.
inline UbiGraph import_edges(std::istream& is) {
  UbiGraph g;
  std::vector<std::vector<int>> basket_items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = detail::split_line(line, '\t');
    if (f[0] == "vu" && f.size() == 2) {
      g.user_ids.add(f[1]);
      continue;
    }
    if (f[0] == "vb" && f.size() == 2) {
      g.basket_ids.add(f[1]);
      g.owner.push_back(-1);
      basket_items.emplace_back();
      continue;
    }
    if (f[0] == "vi" && f.size() == 2) {
      g.item_ids.add(f[1]);
      continue;
    }
    if (f.size() != 3) throw DataError("edge list line " + std::to_string(lineno) + ": expected 3 fields");
    if (f[0] == "ub") {
      const int u = g.user_ids.add(f[1]);
      const int b = g.basket_ids.add(f[2]);
      if (b == static_cast<int>(g.owner.size())) {
        g.owner.push_back(u);
        basket_items.emplace_back();
      } else if (g.owner[static_cast<std::size_t>(b)] == -1) {
        g.owner[static_cast<std::size_t>(b)] = u;
      } else if (g.owner[static_cast<std::size_t>(b)] != u) {
        throw DataError("basket '" + f[2] + "' has two owners in edge list");
      }
    } else if (f[0] == "bi") {
      const int b = g.basket_ids.lookup(f[1]);
      if (b < 0) throw DataError("bi edge references unknown basket '" + f[1] + "' (ub edges must come first)");
      basket_items[static_cast<std::size_t>(b)].push_back(g.item_ids.add(f[2]));
    } else if (f[0] != "ui") {
      throw DataError("unknown edge type '" + f[0] + "' at line " + std::to_string(lineno));
    }
  }
  g.n_users = static_cast<int>(g.user_ids.size());
  g.n_baskets = static_cast<int>(g.basket_ids.size());
  g.n_items = static_cast<int>(g.item_ids.size());
  if (g.n_baskets == 0) throw DataError("edge list contains no ub edges");
  for (int b = 0; b < g.n_baskets; ++b)
    if (g.owner[static_cast<std::size_t>(b)] < 0)
      throw DataError("basket '" + g.basket_ids.raw[static_cast<std::size_t>(b)] + "' has no ub edge");
  g.basket_items = std::move(basket_items);
  for (auto& v : g.basket_items) std::sort(v.begin(), v.end());
  g.user_baskets.assign(static_cast<std::size_t>(g.n_users), {});
  for (int b = 0; b < g.n_baskets; ++b)
    g.user_baskets[static_cast<std::size_t>(g.owner[static_cast<std::size_t>(b)])].push_back(b);
  g.derive_edges();
  return g;
}

}  // namespace basconv
