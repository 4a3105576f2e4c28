#include "grcn/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif

// Every C element is c = fma(a_k, b_k, c) for k = 0, 1, ... in order, whatever
// the tile it lands in, so results do not depend on m, n or the SIMD width.

namespace grcn::gemm {
namespace {

#if defined(__AVX512F__)
struct Simd {
  using V = __m512d;
  static constexpr std::size_t width = 8;
  static V load(const double* p) { return _mm512_loadu_pd(p); }
  static void store(double* p, V v) { _mm512_storeu_pd(p, v); }
  static V splat(double v) { return _mm512_set1_pd(v); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_pd(a, b, c); }
  static __mmask8 mask(std::size_t count) { return static_cast<__mmask8>((1u << count) - 1u); }
  static V load(const double* p, __mmask8 m) { return _mm512_maskz_loadu_pd(m, p); }
  static void store(double* p, V v, __mmask8 m) { _mm512_mask_storeu_pd(p, m, v); }
};
#elif defined(__AVX2__) && defined(__FMA__)
struct Simd {
  using V = __m256d;
  static constexpr std::size_t width = 4;
  static V load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  static V splat(double v) { return _mm256_set1_pd(v); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
};
#else
struct Simd {
  struct V {
    double x;
  };
  static constexpr std::size_t width = 1;
  static V load(const double* p) { return {*p}; }
  static void store(double* p, V v) { *p = v.x; }
  static V splat(double v) { return {v}; }
  static V fma(V a, V b, V c) { return {std::fma(a.x, b.x, c.x)}; }
};
#endif

struct Operands {
  std::size_t n, k;
  const double* a;
  std::size_t row_stride, k_stride;  // a(i, kk) = a[i * row_stride + kk * k_stride]
  const double* b;                   // k x n, row-major
  double* c;                         // m x n, row-major
};

// R rows x (V vectors) columns starting at (i0, j0).
template <std::size_t R, std::size_t V>
inline void tile(const Operands& o, std::size_t i0, std::size_t j0) {
  constexpr std::size_t w = Simd::width;
  typename Simd::V acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) acc[r][v] = Simd::load(o.c + (i0 + r) * o.n + j0 + v * w);
  const double* arow = o.a + i0 * o.row_stride;
  for (std::size_t kk = 0; kk < o.k; ++kk) {
    const double* brow = o.b + kk * o.n + j0;
    typename Simd::V bv[V];
    for (std::size_t v = 0; v < V; ++v) bv[v] = Simd::load(brow + v * w);
    const double* ak = arow + kk * o.k_stride;
    for (std::size_t r = 0; r < R; ++r) {
      const auto av = Simd::splat(ak[r * o.row_stride]);
      for (std::size_t v = 0; v < V; ++v) acc[r][v] = Simd::fma(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) Simd::store(o.c + (i0 + r) * o.n + j0 + v * w, acc[r][v]);
}

#if defined(__AVX512F__)
// R rows x the last `count` (< width) columns, through masked loads and stores.
template <std::size_t R>
inline void masked_tile(const Operands& o, std::size_t i0, std::size_t j0, std::size_t count) {
  const auto m = Simd::mask(count);
  typename Simd::V acc[R];
  for (std::size_t r = 0; r < R; ++r) acc[r] = Simd::load(o.c + (i0 + r) * o.n + j0, m);
  const double* arow = o.a + i0 * o.row_stride;
  for (std::size_t kk = 0; kk < o.k; ++kk) {
    const auto bv = Simd::load(o.b + kk * o.n + j0, m);
    const double* ak = arow + kk * o.k_stride;
    for (std::size_t r = 0; r < R; ++r) acc[r] = Simd::fma(Simd::splat(ak[r * o.row_stride]), bv, acc[r]);
  }
  for (std::size_t r = 0; r < R; ++r) Simd::store(o.c + (i0 + r) * o.n + j0, acc[r], m);
}
#endif

template <std::size_t R>
inline void scalar_columns(const Operands& o, std::size_t i0, std::size_t j_begin) {
  for (std::size_t r = 0; r < R; ++r) {
    double* crow = o.c + (i0 + r) * o.n;
    for (std::size_t j = j_begin; j < o.n; ++j) {
      double acc = crow[j];
      for (std::size_t kk = 0; kk < o.k; ++kk)
        acc = std::fma(o.a[(i0 + r) * o.row_stride + kk * o.k_stride], o.b[kk * o.n + j], acc);
      crow[j] = acc;
    }
  }
}

template <std::size_t R>
inline void row_block(const Operands& o, std::size_t i0) {
  constexpr std::size_t w = Simd::width;
  std::size_t j = 0;
  if constexpr (w > 1) {
    for (; j + 2 * w <= o.n; j += 2 * w) tile<R, 2>(o, i0, j);
    for (; j + w <= o.n; j += w) tile<R, 1>(o, i0, j);
  }
#if defined(__AVX512F__)
  if (j < o.n) masked_tile<R>(o, i0, j, o.n - j);
#else
  scalar_columns<R>(o, i0, j);
#endif
}

void kernel(std::size_t m, const Operands& o) {
  constexpr std::size_t rows = Simd::width > 1 ? 8 : 4;
  std::size_t i = 0;
  for (; i + rows <= m; i += rows) row_block<rows>(o, i);
  for (; i < m; ++i) row_block<1>(o, i);
}

}  // namespace

void nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  kernel(m, {n, k, a, k, 1, b, c});
}

void tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  kernel(m, {n, k, a, 1, m, b, c});
}

void nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::vector<double> bt(k * n);
  constexpr std::size_t block = 16;
  for (std::size_t j0 = 0; j0 < n; j0 += block)
    for (std::size_t k0 = 0; k0 < k; k0 += block)
      for (std::size_t j = j0; j < std::min(n, j0 + block); ++j)
        for (std::size_t kk = k0; kk < std::min(k, k0 + block); ++kk) bt[kk * n + j] = b[j * k + kk];
  kernel(m, {n, k, a, k, 1, bt.data(), c});
}

}  // namespace grcn::gemm
