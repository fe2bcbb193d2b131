#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tractfusion/common.hpp"

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

namespace tractfusion {
namespace nn {

// ---------------------------------------------------------------------------
// Dense row-major matrix. All training math is f64.
// ---------------------------------------------------------------------------

struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int64_t r, int64_t c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

  void resize(int64_t r, int64_t c) {
    rows = r;
    cols = c;
    data.assign(static_cast<size_t>(r * c), 0.0);
  }
  // For outputs that every code path overwrites in full: skips the zero fill
  // when the buffer is already the right size.
  void resize_overwrite(int64_t r, int64_t c) {
    if (static_cast<size_t>(r * c) != data.size()) data.resize(static_cast<size_t>(r * c));
    rows = r;
    cols = c;
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  double* row(int64_t i) { return data.data() + i * cols; }
  const double* row(int64_t i) const { return data.data() + i * cols; }
  double& at(int64_t i, int64_t j) { return data[i * cols + j]; }
  double at(int64_t i, int64_t j) const { return data[i * cols + j]; }
};

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int64_t i = 0; i < a.rows; ++i) {
    const double* src = a.row(i);
    for (int64_t j = 0; j < a.cols; ++j) t.data[j * a.rows + i] = src[j];
  }
  return t;
}

// ---------------------------------------------------------------------------
// GEMM kernels. Per output element the k-summation order is ascending, so
// every path (vector width, worker count) produces byte-identical results:
// row/column partitions never split a reduction.
// ---------------------------------------------------------------------------

namespace detail {

#if defined(__AVX512F__)

// C[i0..i0+mr) rows, all N columns: C (+)= A * B for the given row band.
// Row blocks keep the A panel L2-resident while the B bands stream once per
// block instead of once per row tile.
inline void gemm_nn_rows(int64_t i0, int64_t i1, int64_t K, int64_t N, const double* A, const double* B, double* C, bool accumulate) {
  constexpr int64_t MR = 4, NR = 32, IBLK = 128;
  for (int64_t ib = i0; ib < i1; ib += IBLK) {
    const int64_t ie = std::min(i1, ib + IBLK);
    int64_t j = 0;
    for (; j + NR <= N; j += NR) {
      int64_t i = ib;
      for (; i + MR <= ie; i += MR) {
        __m512d acc[MR][4];
        for (int r = 0; r < MR; ++r)
          for (int v = 0; v < 4; ++v) acc[r][v] = accumulate ? _mm512_loadu_pd(C + (i + r) * N + j + 8 * v) : _mm512_setzero_pd();
        for (int64_t k = 0; k < K; ++k) {
          const double* b = B + k * N + j;
          __m512d b0 = _mm512_loadu_pd(b);
          __m512d b1 = _mm512_loadu_pd(b + 8);
          __m512d b2 = _mm512_loadu_pd(b + 16);
          __m512d b3 = _mm512_loadu_pd(b + 24);
          for (int r = 0; r < MR; ++r) {
            __m512d av = _mm512_set1_pd(A[(i + r) * K + k]);
            acc[r][0] = _mm512_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm512_fmadd_pd(av, b1, acc[r][1]);
            acc[r][2] = _mm512_fmadd_pd(av, b2, acc[r][2]);
            acc[r][3] = _mm512_fmadd_pd(av, b3, acc[r][3]);
          }
        }
        for (int r = 0; r < MR; ++r)
          for (int v = 0; v < 4; ++v) _mm512_storeu_pd(C + (i + r) * N + j + 8 * v, acc[r][v]);
      }
      for (; i < ie; ++i) {
        __m512d acc[4];
        for (int v = 0; v < 4; ++v) acc[v] = accumulate ? _mm512_loadu_pd(C + i * N + j + 8 * v) : _mm512_setzero_pd();
        for (int64_t k = 0; k < K; ++k) {
          const double* b = B + k * N + j;
          __m512d av = _mm512_set1_pd(A[i * K + k]);
          acc[0] = _mm512_fmadd_pd(av, _mm512_loadu_pd(b), acc[0]);
          acc[1] = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + 8), acc[1]);
          acc[2] = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + 16), acc[2]);
          acc[3] = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + 24), acc[3]);
        }
        for (int v = 0; v < 4; ++v) _mm512_storeu_pd(C + i * N + j + 8 * v, acc[v]);
      }
    }
    for (; j + 8 <= N; j += 8) {
      int64_t i = ib;
      for (; i + MR <= ie; i += MR) {
        __m512d acc[MR];
        for (int r = 0; r < MR; ++r) acc[r] = accumulate ? _mm512_loadu_pd(C + (i + r) * N + j) : _mm512_setzero_pd();
        for (int64_t k = 0; k < K; ++k) {
          __m512d b0 = _mm512_loadu_pd(B + k * N + j);
          for (int r = 0; r < MR; ++r) acc[r] = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + r) * K + k]), b0, acc[r]);
        }
        for (int r = 0; r < MR; ++r) _mm512_storeu_pd(C + (i + r) * N + j, acc[r]);
      }
      for (; i < ie; ++i) {
        __m512d acc = accumulate ? _mm512_loadu_pd(C + i * N + j) : _mm512_setzero_pd();
        for (int64_t k = 0; k < K; ++k) acc = _mm512_fmadd_pd(_mm512_set1_pd(A[i * K + k]), _mm512_loadu_pd(B + k * N + j), acc);
        _mm512_storeu_pd(C + i * N + j, acc);
      }
    }
    for (; j < N; ++j) {
      for (int64_t i = ib; i < ie; ++i) {
        double s = accumulate ? C[i * N + j] : 0.0;
        for (int64_t k = 0; k < K; ++k) s = std::fma(A[i * K + k], B[k * N + j], s);
        C[i * N + j] = s;
      }
    }
  }
}

#elif defined(__AVX2__)

inline void gemm_nn_rows(int64_t i0, int64_t i1, int64_t K, int64_t N, const double* A, const double* B, double* C, bool accumulate) {
  constexpr int64_t MR = 4, NR = 16, IBLK = 128;
  for (int64_t ib = i0; ib < i1; ib += IBLK) {
    const int64_t ie = std::min(i1, ib + IBLK);
    int64_t j = 0;
    for (; j + NR <= N; j += NR) {
      int64_t i = ib;
      for (; i + MR <= ie; i += MR) {
        __m256d acc[MR][4];
        for (int r = 0; r < MR; ++r)
          for (int v = 0; v < 4; ++v) acc[r][v] = accumulate ? _mm256_loadu_pd(C + (i + r) * N + j + 4 * v) : _mm256_setzero_pd();
        for (int64_t k = 0; k < K; ++k) {
          const double* b = B + k * N + j;
          __m256d b0 = _mm256_loadu_pd(b);
          __m256d b1 = _mm256_loadu_pd(b + 4);
          __m256d b2 = _mm256_loadu_pd(b + 8);
          __m256d b3 = _mm256_loadu_pd(b + 12);
          for (int r = 0; r < MR; ++r) {
            __m256d av = _mm256_set1_pd(A[(i + r) * K + k]);
            acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
            acc[r][2] = _mm256_fmadd_pd(av, b2, acc[r][2]);
            acc[r][3] = _mm256_fmadd_pd(av, b3, acc[r][3]);
          }
        }
        for (int r = 0; r < MR; ++r)
          for (int v = 0; v < 4; ++v) _mm256_storeu_pd(C + (i + r) * N + j + 4 * v, acc[r][v]);
      }
      for (; i < ie; ++i) {
        __m256d acc[4];
        for (int v = 0; v < 4; ++v) acc[v] = accumulate ? _mm256_loadu_pd(C + i * N + j + 4 * v) : _mm256_setzero_pd();
        for (int64_t k = 0; k < K; ++k) {
          const double* b = B + k * N + j;
          __m256d av = _mm256_set1_pd(A[i * K + k]);
          acc[0] = _mm256_fmadd_pd(av, _mm256_loadu_pd(b), acc[0]);
          acc[1] = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 4), acc[1]);
          acc[2] = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 8), acc[2]);
          acc[3] = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 12), acc[3]);
        }
        for (int v = 0; v < 4; ++v) _mm256_storeu_pd(C + i * N + j + 4 * v, acc[v]);
      }
    }
    for (; j < N; ++j) {
      for (int64_t i = ib; i < ie; ++i) {
        double s = accumulate ? C[i * N + j] : 0.0;
        for (int64_t k = 0; k < K; ++k) s = std::fma(A[i * K + k], B[k * N + j], s);
        C[i * N + j] = s;
      }
    }
  }
}

#else

inline void gemm_nn_rows(int64_t i0, int64_t i1, int64_t K, int64_t N, const double* A, const double* B, double* C, bool accumulate) {
  for (int64_t i = i0; i < i1; ++i) {
    double* c = C + i * N;
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(N));
    for (int64_t k = 0; k < K; ++k) {
      const double av = A[i * K + k];
      const double* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] = std::fma(av, b[j], c[j]);
    }
  }
}

#endif

// dW band: C[K x N] += A^T * B restricted to columns [j0, j1). Register
// tiles over (k, j) with the reduction over m; m is blocked so the B band
// stays cache-resident across k tiles. Blocking keeps each C element's
// summation order ascending in m, so results match the unblocked loop bit
// for bit.
#if defined(__AVX512F__)

inline void gemm_tn_cols(int64_t j0, int64_t j1, int64_t M, int64_t K, int64_t N, const double* A, const double* B, double* C) {
  constexpr int64_t KR = 4, NR = 32, MBLK = 256;
  for (int64_t m0 = 0; m0 < M; m0 += MBLK) {
    const int64_t m1 = std::min(M, m0 + MBLK);
    for (int64_t k = 0; k < K; k += KR) {
      const int64_t kr = std::min<int64_t>(KR, K - k);
      int64_t j = j0;
      for (; j + NR <= j1; j += NR) {
        __m512d acc[KR][4];
        for (int64_t r = 0; r < kr; ++r)
          for (int v = 0; v < 4; ++v) acc[r][v] = _mm512_loadu_pd(C + (k + r) * N + j + 8 * v);
        for (int64_t m = m0; m < m1; ++m) {
          const double* b = B + m * N + j;
          __m512d b0 = _mm512_loadu_pd(b);
          __m512d b1 = _mm512_loadu_pd(b + 8);
          __m512d b2 = _mm512_loadu_pd(b + 16);
          __m512d b3 = _mm512_loadu_pd(b + 24);
          const double* a = A + m * K + k;
          for (int64_t r = 0; r < kr; ++r) {
            __m512d av = _mm512_set1_pd(a[r]);
            acc[r][0] = _mm512_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm512_fmadd_pd(av, b1, acc[r][1]);
            acc[r][2] = _mm512_fmadd_pd(av, b2, acc[r][2]);
            acc[r][3] = _mm512_fmadd_pd(av, b3, acc[r][3]);
          }
        }
        for (int64_t r = 0; r < kr; ++r)
          for (int v = 0; v < 4; ++v) _mm512_storeu_pd(C + (k + r) * N + j + 8 * v, acc[r][v]);
      }
      for (; j + 8 <= j1; j += 8) {
        __m512d acc[KR];
        for (int64_t r = 0; r < kr; ++r) acc[r] = _mm512_loadu_pd(C + (k + r) * N + j);
        for (int64_t m = m0; m < m1; ++m) {
          __m512d b0 = _mm512_loadu_pd(B + m * N + j);
          const double* a = A + m * K + k;
          for (int64_t r = 0; r < kr; ++r) acc[r] = _mm512_fmadd_pd(_mm512_set1_pd(a[r]), b0, acc[r]);
        }
        for (int64_t r = 0; r < kr; ++r) _mm512_storeu_pd(C + (k + r) * N + j, acc[r]);
      }
      for (; j < j1; ++j) {
        for (int64_t r = 0; r < kr; ++r) {
          double s = C[(k + r) * N + j];
          for (int64_t m = m0; m < m1; ++m) s = std::fma(A[m * K + k + r], B[m * N + j], s);
          C[(k + r) * N + j] = s;
        }
      }
    }
  }
}

#elif defined(__AVX2__)

inline void gemm_tn_cols(int64_t j0, int64_t j1, int64_t M, int64_t K, int64_t N, const double* A, const double* B, double* C) {
  constexpr int64_t KR = 4, NR = 16, MBLK = 256;
  for (int64_t m0 = 0; m0 < M; m0 += MBLK) {
    const int64_t m1 = std::min(M, m0 + MBLK);
    for (int64_t k = 0; k < K; k += KR) {
      const int64_t kr = std::min<int64_t>(KR, K - k);
      int64_t j = j0;
      for (; j + NR <= j1; j += NR) {
        __m256d acc[KR][4];
        for (int64_t r = 0; r < kr; ++r)
          for (int v = 0; v < 4; ++v) acc[r][v] = _mm256_loadu_pd(C + (k + r) * N + j + 4 * v);
        for (int64_t m = m0; m < m1; ++m) {
          const double* b = B + m * N + j;
          __m256d b0 = _mm256_loadu_pd(b);
          __m256d b1 = _mm256_loadu_pd(b + 4);
          __m256d b2 = _mm256_loadu_pd(b + 8);
          __m256d b3 = _mm256_loadu_pd(b + 12);
          const double* a = A + m * K + k;
          for (int64_t r = 0; r < kr; ++r) {
            __m256d av = _mm256_set1_pd(a[r]);
            acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
            acc[r][2] = _mm256_fmadd_pd(av, b2, acc[r][2]);
            acc[r][3] = _mm256_fmadd_pd(av, b3, acc[r][3]);
          }
        }
        for (int64_t r = 0; r < kr; ++r)
          for (int v = 0; v < 4; ++v) _mm256_storeu_pd(C + (k + r) * N + j + 4 * v, acc[r][v]);
      }
      for (; j < j1; ++j) {
        for (int64_t r = 0; r < kr; ++r) {
          double s = C[(k + r) * N + j];
          for (int64_t m = m0; m < m1; ++m) s = std::fma(A[m * K + k + r], B[m * N + j], s);
          C[(k + r) * N + j] = s;
        }
      }
    }
  }
}

#else

inline void gemm_tn_cols(int64_t j0, int64_t j1, int64_t M, int64_t K, int64_t N, const double* A, const double* B, double* C) {
  for (int64_t m = 0; m < M; ++m) {
    for (int64_t k = 0; k < K; ++k) {
      const double av = A[m * K + k];
      double* c = C + k * N;
      const double* b = B + m * N;
      for (int64_t j = j0; j < j1; ++j) c[j] = std::fma(av, b[j], c[j]);
    }
  }
}

#endif

}  // namespace detail

// C += A * B (or C = A * B when accumulate is false).
inline void gemm(const Matrix& a, const Matrix& b, Matrix& c, ThreadPool* pool = nullptr, bool accumulate = true) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
    throw NumericError("gemm: shape mismatch");
  const int64_t M = a.rows, K = a.cols, N = b.cols;
  if (pool && pool->width() > 1 && M >= 64) {
    pool->run(M, [&](int64_t lo, int64_t hi) { detail::gemm_nn_rows(lo, hi, K, N, a.data.data(), b.data.data(), c.data.data(), accumulate); });
  } else {
    detail::gemm_nn_rows(0, M, K, N, a.data.data(), b.data.data(), c.data.data(), accumulate);
  }
}

// C += A^T * B   (A is M x K, B is M x N, C is K x N)
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, ThreadPool* pool = nullptr) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw NumericError("gemm_tn: shape mismatch");
  const int64_t M = a.rows, K = a.cols, N = b.cols;
  if (pool && pool->width() > 1 && N >= 64 && M >= 256) {
    pool->run(N, [&](int64_t lo, int64_t hi) { detail::gemm_tn_cols(lo, hi, M, K, N, a.data.data(), b.data.data(), c.data.data()); });
  } else {
    detail::gemm_tn_cols(0, N, M, K, N, a.data.data(), b.data.data(), c.data.data());
  }
}

// ---------------------------------------------------------------------------
// Parameter store. Named groups of flat f64 arrays with matching gradients,
// per-group freeze flags and Adam moment state.
// ---------------------------------------------------------------------------

struct ParamGroup {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::vector<double> grad;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment
  bool frozen = false;

  int64_t size() const { return static_cast<int64_t>(values.size()); }
};

struct ParamStore {
  std::vector<ParamGroup> groups;  // manifest order
  int64_t adam_step = 0;

  ParamGroup& add(const std::string& name, std::vector<int64_t> shape, bool frozen = false) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    ParamGroup g;
    g.name = name;
    g.shape = std::move(shape);
    g.values.assign(static_cast<size_t>(n), 0.0);
    g.grad.assign(static_cast<size_t>(n), 0.0);
    g.m.assign(static_cast<size_t>(n), 0.0);
    g.v.assign(static_cast<size_t>(n), 0.0);
    g.frozen = frozen;
    groups.push_back(std::move(g));
    return groups.back();
  }

  bool has(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return true;
    return false;
  }
  ParamGroup& find(const std::string& name) {
    for (auto& g : groups)
      if (g.name == name) return g;
    throw DataError("parameter group not found: " + name);
  }
  const ParamGroup& find(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return g;
    throw DataError("parameter group not found: " + name);
  }

  void zero_grad() {
    for (auto& g : groups) std::fill(g.grad.begin(), g.grad.end(), 0.0);
  }
  void set_frozen(const std::string& prefix, bool frozen) {
    for (auto& g : groups)
      if (g.name.rfind(prefix, 0) == 0) g.frozen = frozen;
  }
  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }
};

// Glorot-uniform for weights; zeros for biases.
inline void init_affine(ParamGroup& w, int64_t fan_in, int64_t fan_out, Rng rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w.values) x = rng.uniform(-bound, bound);
}

// Matrix view of a [in x out] weight group.
inline Matrix weight_matrix(const ParamGroup& g) {
  if (g.shape.size() != 2) throw NumericError("weight_matrix: group " + g.name + " is not 2-D");
  Matrix w(g.shape[0], g.shape[1]);
  w.data = g.values;
  return w;
}

// ---------------------------------------------------------------------------
// Layers. Forward records whatever backward needs; backward produces exact
// analytic gradients for the recorded pass and accumulates into ParamStore.
// ---------------------------------------------------------------------------

// Y = X * W + b, with W stored [in x out].
inline void affine_forward(const Matrix& x, const ParamGroup& w, const ParamGroup& b, Matrix& y, ThreadPool* pool = nullptr) {
  if (w.shape.size() != 2 || x.cols != w.shape[0])
    throw NumericError("affine " + w.name + ": input width " + std::to_string(x.cols) + " != " + std::to_string(w.shape.empty() ? -1 : w.shape[0]));
  const int64_t out = w.shape[1];
  y.resize_overwrite(x.rows, out);
  for (int64_t i = 0; i < y.rows; ++i) std::memcpy(y.row(i), b.values.data(), sizeof(double) * out);
  Matrix wm(w.shape[0], out);
  wm.data = w.values;
  gemm(x, wm, y, pool);
}

// Accumulates dW, db; writes dX if non-null. `wt` is W^T, prepared by the caller.
inline void affine_backward(const Matrix& x, const ParamGroup& w, const Matrix& wt, const Matrix& dy, ParamGroup& dw_g, ParamGroup& db_g,
                            Matrix* dx, ThreadPool* pool = nullptr) {
  const int64_t out = w.shape[1];
  if (dy.rows != x.rows || dy.cols != out) throw NumericError("affine " + w.name + ": grad shape mismatch");
  // db += colsum(dy)
  for (int64_t i = 0; i < dy.rows; ++i) {
    const double* r = dy.row(i);
    for (int64_t j = 0; j < out; ++j) db_g.grad[j] += r[j];
  }
  // dW += X^T dY
  {
    Matrix dw(w.shape[0], out);
    dw.data.swap(dw_g.grad);
    gemm_tn(x, dy, dw, pool);
    dw.data.swap(dw_g.grad);
  }
  if (dx) {
    dx->resize_overwrite(x.rows, x.cols);
    gemm(dy, wt, *dx, pool, /*accumulate=*/false);
  }
}

inline void relu_forward(const Matrix& x, Matrix& y) {
  y.resize_overwrite(x.rows, x.cols);
  const size_t n = x.data.size();
  for (size_t i = 0; i < n; ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
}

inline void relu_forward_inplace(Matrix& x) {
  for (auto& v : x.data)
    if (v <= 0.0) v = 0.0;
}

// Uses the forward output as the mask: y > 0 iff x > 0 (grad 0 at the kink).
inline void relu_backward_inplace(const Matrix& y, Matrix& dy) {
  if (y.rows != dy.rows || y.cols != dy.cols) throw NumericError("relu: grad shape mismatch");
  const size_t n = y.data.size();
  for (size_t i = 0; i < n; ++i)
    if (y.data[i] <= 0.0) dy.data[i] = 0.0;
}

// Max over the middle axis of a row-major [outer, mid, inner] tensor.
// Ties route to the first maximal index.
inline void maxpool_forward(const Matrix& x, int64_t outer, int64_t mid, int64_t inner, Matrix& y, std::vector<int32_t>& argmax) {
  if (x.rows * x.cols != outer * mid * inner) throw NumericError("maxpool: shape mismatch");
  y.resize_overwrite(outer, inner);
  argmax.assign(static_cast<size_t>(outer * inner), 0);
  const double* src = x.data.data();
  for (int64_t o = 0; o < outer; ++o) {
    double* yo = y.row(o);
    int32_t* ao = argmax.data() + o * inner;
    const double* base = src + o * mid * inner;
    std::memcpy(yo, base, sizeof(double) * inner);
    for (int64_t m = 1; m < mid; ++m) {
      const double* row = base + m * inner;
      for (int64_t i = 0; i < inner; ++i) {
        if (row[i] > yo[i]) {
          yo[i] = row[i];
          ao[i] = static_cast<int32_t>(m);
        }
      }
    }
  }
}

inline void maxpool_backward(const Matrix& dy, int64_t outer, int64_t mid, int64_t inner, const std::vector<int32_t>& argmax, Matrix& dx) {
  if (dy.rows * dy.cols != outer * inner) throw NumericError("maxpool: grad shape mismatch");
  dx.resize(outer * mid, inner);
  if (dx.rows * dx.cols != outer * mid * inner) throw NumericError("maxpool: grad shape mismatch");
  double* dst = dx.data.data();
  const double* src = dy.data.data();
  for (int64_t o = 0; o < outer; ++o) {
    const int32_t* ao = argmax.data() + o * inner;
    for (int64_t i = 0; i < inner; ++i) dst[(o * mid + ao[i]) * inner + i] = src[o * inner + i];
  }
}

// ---------------------------------------------------------------------------
// 1-D convolution over [channels x length] signals, batched as matrix rows.
// W group shape is [out_ch, in_ch, kernel]; zero padding.
// ---------------------------------------------------------------------------

struct Conv1dSpec {
  int64_t in_ch = 1;
  int64_t out_ch = 1;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t pad = 0;

  int64_t out_len(int64_t in_len) const { return (in_len + 2 * pad - kernel) / stride + 1; }
};

inline void conv1d_forward(const Matrix& x, int64_t in_len, const Conv1dSpec& spec, const ParamGroup& w, const ParamGroup& b, Matrix& y) {
  if (x.cols != spec.in_ch * in_len) throw NumericError("conv1d " + w.name + ": input width mismatch");
  if (w.shape.size() != 3 || w.shape[0] != spec.out_ch || w.shape[1] != spec.in_ch || w.shape[2] != spec.kernel)
    throw NumericError("conv1d " + w.name + ": weight shape mismatch");
  const int64_t lo = spec.out_len(in_len);
  if (lo < 1) throw DataError("conv1d " + w.name + ": series too short for receptive field");
  y.resize_overwrite(x.rows, spec.out_ch * lo);
  for (int64_t s = 0; s < x.rows; ++s) {
    const double* xs = x.row(s);
    double* ys = y.row(s);
    for (int64_t oc = 0; oc < spec.out_ch; ++oc) {
      const double* wk = w.values.data() + oc * spec.in_ch * spec.kernel;
      for (int64_t p = 0; p < lo; ++p) {
        const int64_t start = p * spec.stride - spec.pad;
        double acc = b.values[oc];
        for (int64_t ic = 0; ic < spec.in_ch; ++ic) {
          const double* xc = xs + ic * in_len;
          const double* wc = wk + ic * spec.kernel;
          for (int64_t t = 0; t < spec.kernel; ++t) {
            const int64_t pos = start + t;
            if (pos >= 0 && pos < in_len) acc = std::fma(wc[t], xc[pos], acc);
          }
        }
        ys[oc * lo + p] = acc;
      }
    }
  }
}

inline void conv1d_backward(const Matrix& x, int64_t in_len, const Conv1dSpec& spec, const ParamGroup& w, const Matrix& dy,
                            ParamGroup& dw_g, ParamGroup& db_g, Matrix* dx) {
  const int64_t lo = spec.out_len(in_len);
  if (dy.rows != x.rows || dy.cols != spec.out_ch * lo) throw NumericError("conv1d " + w.name + ": grad shape mismatch");
  if (dx) dx->resize(x.rows, x.cols);
  for (int64_t s = 0; s < x.rows; ++s) {
    const double* xs = x.row(s);
    const double* dys = dy.row(s);
    double* dxs = dx ? dx->row(s) : nullptr;
    for (int64_t oc = 0; oc < spec.out_ch; ++oc) {
      const double* wk = w.values.data() + oc * spec.in_ch * spec.kernel;
      double* dwk = dw_g.grad.data() + oc * spec.in_ch * spec.kernel;
      for (int64_t p = 0; p < lo; ++p) {
        const double g = dys[oc * lo + p];
        if (g == 0.0) continue;
        db_g.grad[oc] += g;
        const int64_t start = p * spec.stride - spec.pad;
        for (int64_t ic = 0; ic < spec.in_ch; ++ic) {
          const double* xc = xs + ic * in_len;
          double* dwc = dwk + ic * spec.kernel;
          for (int64_t t = 0; t < spec.kernel; ++t) {
            const int64_t pos = start + t;
            if (pos >= 0 && pos < in_len) {
              dwc[t] = std::fma(g, xc[pos], dwc[t]);
              if (dxs) dxs[ic * in_len + pos] = std::fma(g, wk[ic * spec.kernel + t], dxs[ic * in_len + pos]);
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Weighted softmax cross-entropy over 4-class logits.
// loss = mean_i w[y_i] * (-log softmax(logits_i)[y_i])
// ---------------------------------------------------------------------------

struct XentResult {
  double loss = 0.0;
  Matrix dlogits;  // d loss / d logits
};

inline XentResult softmax_xent(const Matrix& logits, const std::vector<int>& labels, const std::array<double, 4>& class_weights) {
  if (logits.cols != kNumClasses) throw NumericError("softmax_xent: expected 4 logits per sample");
  if (static_cast<int64_t>(labels.size()) != logits.rows) throw NumericError("softmax_xent: label count mismatch");
  XentResult res;
  res.dlogits.resize_overwrite(logits.rows, logits.cols);
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (int64_t i = 0; i < logits.rows; ++i) {
    const double* z = logits.row(i);
    const int y = labels[i];
    if (y < 0 || y >= kNumClasses) throw DataError("softmax_xent: label out of range");
    double zmax = z[0];
    for (int j = 1; j < kNumClasses; ++j) zmax = std::max(zmax, z[j]);
    if (!std::isfinite(zmax)) throw NumericError("softmax_xent: non-finite logits");
    double denom = 0.0;
    double e[kNumClasses];
    for (int j = 0; j < kNumClasses; ++j) {
      e[j] = std::exp(z[j] - zmax);
      denom += e[j];
    }
    const double w = class_weights[static_cast<size_t>(y)];
    res.loss += w * (std::log(denom) - (z[y] - zmax)) * inv_n;
    double* d = res.dlogits.row(i);
    for (int j = 0; j < kNumClasses; ++j) d[j] = w * inv_n * (e[j] / denom - (j == y ? 1.0 : 0.0));
  }
  if (!std::isfinite(res.loss)) throw NumericError("softmax_xent: non-finite loss");
  return res;
}

// ---------------------------------------------------------------------------
// Adam with cosine annealing. Frozen groups are skipped entirely, so their
// values and moment state stay bit-identical across a training stage.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(ParamStore& store, double lr, const AdamConfig& cfg = {}) {
  const int64_t t = ++store.adam_step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& g : store.groups) {
    if (g.frozen) continue;
    const size_t n = g.values.size();
    for (size_t i = 0; i < n; ++i) {
      const double gr = g.grad[i];
      g.m[i] = cfg.beta1 * g.m[i] + (1.0 - cfg.beta1) * gr;
      g.v[i] = cfg.beta2 * g.v[i] + (1.0 - cfg.beta2) * gr * gr;
      const double mhat = g.m[i] / bc1;
      const double vhat = g.v[i] / bc2;
      g.values[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// lr(step) = base * 0.5 * (1 + cos(pi * step / total)); lr(0)=base, lr(total)=0.
inline double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, frac)));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker. Central differences on a random
// parameter subsample, >= 50 coordinates per group. The reported error is
// |analytic - numeric| / max(1, |analytic|, |numeric|); losses are O(1) so
// the unit floor keeps near-zero gradients from inflating the ratio.
//
// A probe whose +-eps interval straddles a relu kink or a max-pool tie does
// not measure a derivative at all. Probes are screened with the second
// difference |f(x+e) - 2 f(x) + f(x-e)| / e: across a kink it equals the
// slope jump scaled by the crossing position and bounds the central-
// difference error by half of itself, while on smooth coordinates it is
// O(e * f''). Flagged probes are excluded and counted in skipped_nonsmooth;
// a genuinely wrong gradient stays smooth under probing and still fails.
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_group;
  int64_t skipped_nonsmooth = 0;
};

inline GradCheckResult gradcheck(ParamStore& store, const std::function<double()>& loss_fn, const std::function<void()>& compute_grads,
                                 Rng rng, int64_t coords_per_group = 50, double epsilon = 1e-5) {
  compute_grads();  // populates store grads at the current parameters
  std::vector<std::vector<double>> analytic;
  analytic.reserve(store.groups.size());
  for (auto& g : store.groups) analytic.push_back(g.grad);
  // Gate so that an undetected kink's central-difference error stays below
  // 9e-5: for a slope jump J crossed at offset d, the second difference is
  // J*(eps-d)/eps and the central-difference error is exactly half of it.
  const double base_loss = loss_fn();
  const double curvature_gate = 1.8e-4 * std::max(1.0, std::fabs(base_loss));

  GradCheckResult res;
  for (size_t gi = 0; gi < store.groups.size(); ++gi) {
    auto& g = store.groups[gi];
    const int64_t n = g.size();
    if (n == 0) continue;
    const int64_t probes = std::min<int64_t>(n, coords_per_group);
    // Sample without replacement when the group is small enough to matter.
    std::vector<int64_t> idx;
    if (probes == n) {
      idx.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < probes; ++i) idx.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
    }
    for (int64_t i : idx) {
      const double saved = g.values[static_cast<size_t>(i)];
      g.values[static_cast<size_t>(i)] = saved + epsilon;
      const double lp = loss_fn();
      g.values[static_cast<size_t>(i)] = saved - epsilon;
      const double lm = loss_fn();
      g.values[static_cast<size_t>(i)] = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = analytic[gi][static_cast<size_t>(i)];
      const double second_diff = std::fabs(lp - 2.0 * base_loss + lm) / epsilon;
      if (second_diff > curvature_gate) {
        ++res.skipped_nonsmooth;
        continue;
      }
      const double scale = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      double rel = std::fabs(a - numeric) / scale;
      if (rel > 9e-5) {
        // Curvature can partially mask a kink in the second difference;
        // cross-check with the half step. A smooth (correct or wrong)
        // gradient gives consistent finite differences, a straddled kink
        // does not.
        g.values[static_cast<size_t>(i)] = saved + 0.5 * epsilon;
        const double lp2 = loss_fn();
        g.values[static_cast<size_t>(i)] = saved - 0.5 * epsilon;
        const double lm2 = loss_fn();
        g.values[static_cast<size_t>(i)] = saved;
        const double refined = (lp2 - lm2) / epsilon;
        if (std::fabs(refined - numeric) > 3e-6 * scale) {
          ++res.skipped_nonsmooth;
          continue;
        }
      }
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_group = g.name;
      }
    }
  }
  return res;
}

}  // namespace nn
}  // namespace tractfusion
