// Compiled with -mavx2 -mfma. Callers must gate on a runtime CPU check
// before touching this table.

#include "kernels_body.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace safl::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

struct Avx2Prim {
  static void axpy(size_t n, double a, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      __m256d vy = _mm256_loadu_pd(y + i);
      vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
      _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
  }

  static double dot(size_t n, const double* x, const double* y) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
      acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                             acc0);
      acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                             _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
      acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                             acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
  }

  static double sum(size_t n, const double* x) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
  }

  static void affine(size_t n, double a, const double* x, double c,
                     double* y) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
      _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vc));
    for (; i < n; ++i) y[i] = a * x[i] + c;
  }

  static void triad(size_t n, double a, const double* p, double b,
                    const double* q, double c, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      __m256d t = _mm256_fmadd_pd(vb, _mm256_loadu_pd(q + i), vc);
      _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(p + i), t));
    }
    for (; i < n; ++i) y[i] = a * p[i] + b * q[i] + c;
  }

  static void relu(size_t n, const double* x, double* y) {
    const __m256d z = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
      _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }

  static void relu_bwd(size_t n, const double* x, const double* dy,
                       double* dx) {
    const __m256d z = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      __m256d m = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
      _mm256_storeu_pd(dx + i, _mm256_and_pd(m, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  }
};

const Ops kTable = detail::make_ops<Avx2Prim>("avx2");

}  // namespace

const Ops* avx2_table_impl() { return &kTable; }

}  // namespace safl::kernels

#else

namespace safl::kernels {
const Ops* avx2_table_impl() { return nullptr; }
}  // namespace safl::kernels

#endif
