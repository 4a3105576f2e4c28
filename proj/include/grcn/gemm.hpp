#pragma once

#include <cstddef>

namespace grcn::gemm {

// Row-major dense matrix products that accumulate into C. Every output element
// is reduced over k in ascending order with fused multiply-add, independent of
// the matrix sizes, so a product is bit-reproducible no matter how the
// surrounding computation is batched.

// C[M x N] += A[M x K] * B[K x N]
void nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

// C[M x N] += A[K x M]^T * B[K x N]
void tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

// C[M x N] += A[M x K] * B[N x K]^T
void nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

}  // namespace grcn::gemm
