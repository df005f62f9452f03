#pragma once

#include <cstddef>
#include <span>

// Dense f64 kernels behind the differentiable primitives. Two builds of each
// kernel exist: `serial` is the plain reference loop nest, `par` the OpenMP
// version used by the tape. Each output element is produced by one thread
// with a fixed summation order, so `par` is deterministic for any thread count.
namespace fnode::kernels {

struct LinearDims {
  std::size_t batch;
  std::size_t in;
  std::size_t out;
};

namespace serial {

// y[b,o] = sum_i x[b,i] * w[o,i] + bias[o]   (bias may be empty)
void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
// Accumulates into dx, dw, dbias; any of them may be empty to skip.
void linear_backward(LinearDims d, std::span<const double> dy, std::span<const double> x,
                     std::span<const double> w, std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias);
// c[m,n] = a[m,k] * b[k,n]
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);

}  // namespace serial

namespace par {

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void linear_backward(LinearDims d, std::span<const double> dy, std::span<const double> x,
                     std::span<const double> w, std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias);
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);

}  // namespace par

// Matmul backward is expressed through the same loops in both builds:
// da[m,k] += dc[m,n] b[k,n]^T ; db[k,n] += a[m,k]^T dc[m,n]
void matmul_backward(std::size_t m, std::size_t k, std::size_t n, std::span<const double> dc,
                     std::span<const double> a, std::span<const double> b, std::span<double> da,
                     std::span<double> db);

// y = tanh(x) elementwise through glibc's vector math library when available.
// Every element goes through the same vector routine, tails included.
void tanh(std::span<const double> x, std::span<double> y);

}  // namespace fnode::kernels
