#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "basconv/common.hpp"

namespace basconv {

// ---------------------------------------------------------------------------
// Dense matrices
// ---------------------------------------------------------------------------

// Row-major dense matrix of doubles. Everything in the model and the trainer
// runs in double precision so that finite-difference gradient checks can be
// held to tight tolerances.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  DenseMatrix() = default;
  DenseMatrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }

  static DenseMatrix identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_str(int r, int c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows, a.cols) +
                         " vs " + shape_str(b.rows, b.cols));
}

// C = A * B. Fixed i,k,j loop order: each output element accumulates its
// k-terms left to right, so results are reproducible run to run.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: shape mismatch " + shape_str(a.rows, a.cols) + " * " +
                         shape_str(b.rows, b.cols));
  DenseMatrix c(a.rows, b.cols);
#pragma omp parallel for schedule(static) if (a.rows > 63)
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// C = A^T * B without materializing the transpose. Rows are accumulated in
// fixed 256-row blocks reduced in ascending order, so the result does not
// depend on the thread count.
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows != b.rows)
    throw DimensionError("matmul_tn: shape mismatch " + shape_str(a.rows, a.cols) + "^T * " +
                         shape_str(b.rows, b.cols));
  DenseMatrix c(a.cols, b.cols);
  constexpr int kBlock = 256;
  const int n_blocks = (a.rows + kBlock - 1) / kBlock;
  if (n_blocks <= 1) {
    for (int i = 0; i < a.rows; ++i) {
      const double* arow = a.row(i);
      const double* brow = b.row(i);
      for (int k = 0; k < a.cols; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        double* crow = c.row(k);
        for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
      }
    }
    return c;
  }
  std::vector<DenseMatrix> partial(static_cast<std::size_t>(n_blocks));
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < n_blocks; ++blk) {
    DenseMatrix p(a.cols, b.cols);
    const int lo = blk * kBlock;
    const int hi = std::min(a.rows, lo + kBlock);
    for (int i = lo; i < hi; ++i) {
      const double* arow = a.row(i);
      const double* brow = b.row(i);
      for (int k = 0; k < a.cols; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        double* prow = p.row(k);
        for (int j = 0; j < b.cols; ++j) prow[j] += aik * brow[j];
      }
    }
    partial[static_cast<std::size_t>(blk)] = std::move(p);
  }
  for (const auto& p : partial)
    for (std::size_t i = 0; i < c.size(); ++i) c.v[i] += p.v[i];
  return c;
}

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "add");
  DenseMatrix c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) c.v[i] = a.v[i] + b.v[i];
  return c;
}

inline void add_inplace(DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += b.v[i];
}

inline DenseMatrix scale(const DenseMatrix& a, double c) {
  DenseMatrix out = a;
  for (double& x : out.v) x *= c;
  return out;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) c.v[i] = a.v[i] * b.v[i];
  return c;
}

// a += b ⊙ c
inline void add_hadamard_inplace(DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& c) {
  require_same_shape(a, b, "add_hadamard");
  require_same_shape(b, c, "add_hadamard");
  for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += b.v[i] * c.v[i];
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// 1 x cols row of column sums, accumulated top to bottom.
inline DenseMatrix colsum(const DenseMatrix& a) {
  DenseMatrix s(1, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    for (int j = 0; j < a.cols; ++j) s.v[static_cast<std::size_t>(j)] += arow[j];
  }
  return s;
}

inline double frobenius_sq(const DenseMatrix& a) {
  double s = 0.0;
  for (double x : a.v) s += x * x;
  return s;
}

// ---------------------------------------------------------------------------
// Sparse interaction matrices (CSR)
// ---------------------------------------------------------------------------

enum class MatrixKind { Binary, RowNormalized };

// Compressed-row sparse matrix holding one of the interaction relations
// (user-basket, basket-item, user-item) either as raw 0/1 entries or with
// each nonzero row scaled to sum to one.
struct CsrMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;  // size rows+1
  std::vector<int> col_idx;
  std::vector<double> val;
  MatrixKind kind = MatrixKind::Binary;

  CsrMatrix() = default;
  CsrMatrix(int r, int c) : rows(r), cols(c), row_ptr(static_cast<std::size_t>(r) + 1, 0) {}

  std::size_t nnz() const { return col_idx.size(); }

  // Builds a binary matrix from per-row column lists (columns need not be
  // sorted; they are stored as given).
  static CsrMatrix from_rows(int rows, int cols, const std::vector<std::vector<int>>& row_cols) {
    CsrMatrix m(rows, cols);
    std::size_t total = 0;
    for (const auto& rc : row_cols) total += rc.size();
    m.col_idx.reserve(total);
    m.val.reserve(total);
    for (int r = 0; r < rows; ++r) {
      for (int c : row_cols[static_cast<std::size_t>(r)]) {
        m.col_idx.push_back(c);
        m.val.push_back(1.0);
      }
      m.row_ptr[static_cast<std::size_t>(r) + 1] = static_cast<int>(m.col_idx.size());
    }
    return m;
  }

  static CsrMatrix identity(int n) {
    CsrMatrix m(n, n);
    m.col_idx.resize(static_cast<std::size_t>(n));
    m.val.assign(static_cast<std::size_t>(n), 1.0);
    for (int i = 0; i < n; ++i) {
      m.col_idx[static_cast<std::size_t>(i)] = i;
      m.row_ptr[static_cast<std::size_t>(i) + 1] = i + 1;
    }
    return m;
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int k = row_ptr[static_cast<std::size_t>(r)]; k < row_ptr[static_cast<std::size_t>(r) + 1]; ++k)
        d(r, col_idx[static_cast<std::size_t>(k)]) = val[static_cast<std::size_t>(k)];
    return d;
  }
};

// Divides every nonzero row by its row sum (the node degree). Zero rows stay
// all-zero; that convention is what lets zero-degree nodes contribute nothing
// to the aggregation instead of producing NaNs.
inline CsrMatrix normalize_rows(const CsrMatrix& m) {
  CsrMatrix out = m;
  for (int r = 0; r < m.rows; ++r) {
    const int begin = m.row_ptr[static_cast<std::size_t>(r)];
    const int end = m.row_ptr[static_cast<std::size_t>(r) + 1];
    double sum = 0.0;
    for (int k = begin; k < end; ++k) sum += m.val[static_cast<std::size_t>(k)];
    if (sum == 0.0) continue;
    for (int k = begin; k < end; ++k) out.val[static_cast<std::size_t>(k)] = m.val[static_cast<std::size_t>(k)] / sum;
  }
  out.kind = MatrixKind::RowNormalized;
  return out;
}

// Transpose via counting sort over columns; entry order within each output
// row follows the input row order, so the layout is deterministic.
inline CsrMatrix csr_transpose(const CsrMatrix& m) {
  CsrMatrix t(m.cols, m.rows);
  t.kind = m.kind;
  t.col_idx.resize(m.nnz());
  t.val.resize(m.nnz());
  std::vector<int> count(static_cast<std::size_t>(m.cols) + 1, 0);
  for (int c : m.col_idx) ++count[static_cast<std::size_t>(c) + 1];
  for (int c = 0; c < m.cols; ++c) count[static_cast<std::size_t>(c) + 1] += count[static_cast<std::size_t>(c)];
  t.row_ptr = count;
  std::vector<int> cursor = count;
  for (int r = 0; r < m.rows; ++r) {
    for (int k = m.row_ptr[static_cast<std::size_t>(r)]; k < m.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
      const int c = m.col_idx[static_cast<std::size_t>(k)];
      const int pos = cursor[static_cast<std::size_t>(c)]++;
      t.col_idx[static_cast<std::size_t>(pos)] = r;
      t.val[static_cast<std::size_t>(pos)] = m.val[static_cast<std::size_t>(k)];
    }
  }
  return t;
}

// Sparse times dense. Each output row accumulates its terms in stored-entry
// order (left to right), the documented deterministic reduction order.
inline DenseMatrix spmm(const CsrMatrix& s, const DenseMatrix& d) {
  if (s.cols != d.rows)
    throw DimensionError("spmm: shape mismatch " + shape_str(s.rows, s.cols) + " * " +
                         shape_str(d.rows, d.cols));
  DenseMatrix out(s.rows, d.cols);
#pragma omp parallel for schedule(static) if (s.rows > 63)
  for (int r = 0; r < s.rows; ++r) {
    double* orow = out.row(r);
    for (int k = s.row_ptr[static_cast<std::size_t>(r)]; k < s.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
      const double w = s.val[static_cast<std::size_t>(k)];
      const double* drow = d.row(s.col_idx[static_cast<std::size_t>(k)]);
      for (int j = 0; j < d.cols; ++j) orow[j] += w * drow[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { Sigmoid, LeakyRelu };

inline const char* activation_name(Activation a) {
  return a == Activation::Sigmoid ? "sigmoid" : "leaky-relu";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "leaky-relu") return Activation::LeakyRelu;
  throw ConfigError("unknown activation '" + s + "' (expected sigmoid or leaky-relu)");
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kLeakySlope = 0.2;

inline DenseMatrix activation(const DenseMatrix& h, Activation kind) {
  DenseMatrix out(h.rows, h.cols);
  if (kind == Activation::Sigmoid) {
    for (std::size_t i = 0; i < h.size(); ++i) out.v[i] = sigmoid(h.v[i]);
  } else {
    for (std::size_t i = 0; i < h.size(); ++i)
      out.v[i] = h.v[i] >= 0.0 ? h.v[i] : kLeakySlope * h.v[i];
  }
  return out;
}

// Derivative evaluated at the pre-activation h.
inline DenseMatrix activation_deriv(const DenseMatrix& h, Activation kind) {
  DenseMatrix out(h.rows, h.cols);
  if (kind == Activation::Sigmoid) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double s = sigmoid(h.v[i]);
      out.v[i] = s * (1.0 - s);
    }
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) out.v[i] = h.v[i] >= 0.0 ? 1.0 : kLeakySlope;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic random stream
// ---------------------------------------------------------------------------

// mt19937_64 has a fully specified state transition, and all derived draws
// below avoid std::uniform_*_distribution (whose output is implementation
// defined), so the same seed yields the same sequence on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  int index(std::size_t n) { return static_cast<int>(uniform_int(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[uniform_int(i)]);
  }

  // Derived stream for an independent purpose (split masking, per-fraction
  // retraining, ...). SplitMix64-style mixing keeps streams decorrelated.
  RngStream fork(std::uint64_t tag) const {
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return RngStream(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_;
};

// Xavier/Glorot uniform initialization: entries on
// [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))], drawn row-major.
inline DenseMatrix xavier_init(int rows, int cols, RngStream& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  DenseMatrix m(rows, cols);
  for (double& x : m.v) x = rng.uniform(-bound, bound);
  return m;
}

}  // namespace basconv
