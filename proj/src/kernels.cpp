#include "fnode/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__x86_64__) && defined(__GLIBC__) && (__GLIBC__ > 2 || __GLIBC_MINOR__ >= 35)
#include <immintrin.h>
#define FNODE_HAVE_MVEC 1
extern "C" {
#if defined(__AVX512F__)
__m512d _ZGVeN8v_tanh(__m512d);
#elif defined(__AVX2__)
__m256d _ZGVdN4v_tanh(__m256d);
#else
__m128d _ZGVbN2v_tanh(__m128d);
#endif
}
#endif

namespace fnode::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

// Eight-lane vector: lane j sums the terms with index j mod 8, followed by a
// fixed reduction tree, so results never depend on pointer alignment.
typedef double v8 __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 8;

inline v8 load(const double* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store(double* p, v8 v) { std::memcpy(p, &v, sizeof v); }

inline double reduce(v8 a) { return ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7])); }

inline double dot(const double* a, const double* b, std::size_t n) {
  v8 acc = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) acc += load(a + i) * load(b + i);
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return reduce(acc) + tail;
}

// Four dot products of x against consecutive rows of w; each equals dot(x, row).
inline void dot4(const double* x, const double* w, std::size_t n, double* out) {
  const double* w1 = w + n;
  const double* w2 = w + 2 * n;
  const double* w3 = w + 3 * n;
  v8 a0 = {}, a1 = {}, a2 = {}, a3 = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const v8 xv = load(x + i);
    a0 += xv * load(w + i);
    a1 += xv * load(w1 + i);
    a2 += xv * load(w2 + i);
    a3 += xv * load(w3 + i);
  }
  double t0 = 0.0, t1 = 0.0, t2 = 0.0, t3 = 0.0;
  for (; i < n; ++i) {
    t0 += x[i] * w[i];
    t1 += x[i] * w1[i];
    t2 += x[i] * w2[i];
    t3 += x[i] * w3[i];
  }
  out[0] = reduce(a0) + t0;
  out[1] = reduce(a1) + t1;
  out[2] = reduce(a2) + t2;
  out[3] = reduce(a3) + t3;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) store(y + i, load(y + i) + alpha * load(x + i));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// acc[r] (columns [c0, c0 + 8V) of dst row r) += sum_k coef(r, k) * src_k[c0...]
// with k ascending, for R destination rows.
template <std::size_t R, std::size_t V, class Coef, class Src>
inline void strip_update(double* const* dst, std::size_t c0, std::size_t count, Coef coef, Src src) {
  v8 acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) acc[r][v] = load(dst[r] + c0 + v * kLanes);
  for (std::size_t k = 0; k < count; ++k) {
    const double* s = src(k) + c0;
    v8 sv[V];
    for (std::size_t v = 0; v < V; ++v) sv[v] = load(s + v * kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const double g = coef(r, k);
      for (std::size_t v = 0; v < V; ++v) acc[r][v] += g * sv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) store(dst[r] + c0 + v * kLanes, acc[r][v]);
}

// Same update for all columns of R rows: 16-wide strips, then 8, then scalars.
template <std::size_t R, class Coef, class Src>
inline void rows_update(double* const* dst, std::size_t cols, std::size_t count, Coef coef, Src src) {
  std::size_t c = 0;
  for (; c + 2 * kLanes <= cols; c += 2 * kLanes) strip_update<R, 2>(dst, c, count, coef, src);
  for (; c + kLanes <= cols; c += kLanes) strip_update<R, 1>(dst, c, count, coef, src);
  for (; c < cols; ++c) {
    for (std::size_t r = 0; r < R; ++r) {
      double a = dst[r][c];
      for (std::size_t k = 0; k < count; ++k) a += coef(r, k) * src(k)[c];
      dst[r][c] = a;
    }
  }
}

// Runs body(i) for i in [0, n); only large jobs enter an OpenMP region,
// since even a one-thread region costs about a microsecond.
template <class Body>
inline void for_each_block(long n, bool parallel, Body body) {
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) body(i);
  } else {
    for (long i = 0; i < n; ++i) body(i);
  }
}

}  // namespace

namespace serial {

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < d.in; ++i) s += x[b * d.in + i] * w[o * d.in + i];
      y[b * d.out + o] = s + (bias.empty() ? 0.0 : bias[o]);
    }
  }
}

void linear_backward(LinearDims d, std::span<const double> dy, std::span<const double> x,
                     std::span<const double> w, std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = dy[b * d.out + o];
      if (!dbias.empty()) dbias[o] += g;
      for (std::size_t i = 0; i < d.in; ++i) {
        if (!dx.empty()) dx[b * d.in + i] += g * w[o * d.in + i];
        if (!dw.empty()) dw[o * d.in + i] += g * x[b * d.in + i];
      }
    }
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t col = 0; col < n; ++col) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += a[r * k + j] * b[j * n + col];
      c[r * n + col] = s;
    }
}

}  // namespace serial

namespace par {

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const double* xp = x.data();
  const double* wp = w.data();
  double* yp = y.data();
  const bool has_bias = !bias.empty();
  const long blocks = static_cast<long>((d.out + 3) / 4);
  for_each_block(blocks, d.batch * d.in * d.out >= kParallelWork, [&](long blk) {
    const std::size_t o0 = static_cast<std::size_t>(blk) * 4;
    const std::size_t width = std::min<std::size_t>(4, d.out - o0);
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* xr = xp + b * d.in;
      double r[4];
      if (width == 4) {
        dot4(xr, wp + o0 * d.in, d.in, r);
      } else {
        for (std::size_t k = 0; k < width; ++k) r[k] = dot(xr, wp + (o0 + k) * d.in, d.in);
      }
      for (std::size_t k = 0; k < width; ++k) yp[b * d.out + o0 + k] = r[k] + (has_bias ? bias[o0 + k] : 0.0);
    }
  });
}

void linear_backward(LinearDims d, std::span<const double> dy, std::span<const double> x,
                     std::span<const double> w, std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias) {
  const bool big = d.batch * d.in * d.out >= kParallelWork;
  if (d.batch == 1 && !big) {
    // One pass over w serves both products.
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = dy[o];
      if (!dbias.empty()) dbias[o] += g;
      if (!dw.empty()) axpy(g, x.data(), dw.data() + o * d.in, d.in);
      if (!dx.empty()) axpy(g, w.data() + o * d.in, dx.data(), d.in);
    }
    return;
  }
  if (!dbias.empty()) {
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t o = 0; o < d.out; ++o) dbias[o] += dy[b * d.out + o];
  }
  if (!dw.empty()) {
    // dw[o, :] += sum_b dy[b, o] x[b, :], four rows of dw per task.
    const long blocks = static_cast<long>((d.out + 3) / 4);
    for_each_block(blocks, big, [&](long blk) {
      const std::size_t o0 = static_cast<std::size_t>(blk) * 4;
      const std::size_t rows = std::min<std::size_t>(4, d.out - o0);
      double* dst[4];
      for (std::size_t r = 0; r < rows; ++r) dst[r] = dw.data() + (o0 + r) * d.in;
      auto coef = [&](std::size_t r, std::size_t b) { return dy[b * d.out + o0 + r]; };
      auto src = [&](std::size_t b) { return x.data() + b * d.in; };
      if (rows == 4) {
        rows_update<4>(dst, d.in, d.batch, coef, src);
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          double* one[1] = {dst[r]};
          rows_update<1>(one, d.in, d.batch, [&](std::size_t, std::size_t b) { return coef(r, b); }, src);
        }
      }
    });
  }
  if (!dx.empty()) {
    // dx[b, :] += sum_o dy[b, o] w[o, :], four batch rows per task. Outputs
    // are taken in ascending chunks that stay cache resident across tasks.
    constexpr std::size_t kChunk = 256;
    const long blocks = static_cast<long>((d.batch + 3) / 4);
    for (std::size_t c0 = 0; c0 < d.out; c0 += kChunk) {
      const std::size_t count = std::min(kChunk, d.out - c0);
      for_each_block(blocks, big, [&](long blk) {
        const std::size_t b0 = static_cast<std::size_t>(blk) * 4;
        const std::size_t rows = std::min<std::size_t>(4, d.batch - b0);
        double* dst[4];
        for (std::size_t r = 0; r < rows; ++r) dst[r] = dx.data() + (b0 + r) * d.in;
        auto coef = [&](std::size_t r, std::size_t o) { return dy[(b0 + r) * d.out + c0 + o]; };
        auto src = [&](std::size_t o) { return w.data() + (c0 + o) * d.in; };
        if (rows == 4) {
          rows_update<4>(dst, d.in, count, coef, src);
        } else {
          for (std::size_t r = 0; r < rows; ++r) {
            double* one[1] = {dst[r]};
            rows_update<1>(one, d.in, count, [&](std::size_t, std::size_t o) { return coef(r, o); }, src);
          }
        }
      });
    }
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  const long rows = static_cast<long>(m);
  for_each_block(rows, m * k * n >= kParallelWork, [&](long r) {
    double* crow = c.data() + r * n;
    for (std::size_t col = 0; col < n; ++col) crow[col] = 0.0;
    for (std::size_t j = 0; j < k; ++j) axpy(a[r * k + j], b.data() + j * n, crow, n);
  });
}

}  // namespace par

void matmul_backward(std::size_t m, std::size_t k, std::size_t n, std::span<const double> dc,
                     std::span<const double> a, std::span<const double> b, std::span<double> da,
                     std::span<double> db) {
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      if (!da.empty()) da[r * k + j] += dot(dc.data() + r * n, b.data() + j * n, n);
      if (!db.empty()) axpy(a[r * k + j], dc.data() + r * n, db.data() + j * n, n);
    }
  }
}

void tanh(std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
#ifdef FNODE_HAVE_MVEC
#if defined(__AVX512F__)
  constexpr std::size_t w = 8;
  auto apply = [](const double* in, double* out) { _mm512_storeu_pd(out, _ZGVeN8v_tanh(_mm512_loadu_pd(in))); };
#elif defined(__AVX2__)
  constexpr std::size_t w = 4;
  auto apply = [](const double* in, double* out) { _mm256_storeu_pd(out, _ZGVdN4v_tanh(_mm256_loadu_pd(in))); };
#else
  constexpr std::size_t w = 2;
  auto apply = [](const double* in, double* out) { _mm_storeu_pd(out, _ZGVbN2v_tanh(_mm_loadu_pd(in))); };
#endif
  std::size_t i = 0;
  for (; i + w <= n; i += w) apply(x.data() + i, y.data() + i);
  if (i < n) {
    double in[w] = {}, out[w];
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(i), x.end(), in);
    apply(in, out);
    std::copy(out, out + (n - i), y.begin() + static_cast<std::ptrdiff_t>(i));
  }
#else
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
#endif
}

}  // namespace fnode::kernels
