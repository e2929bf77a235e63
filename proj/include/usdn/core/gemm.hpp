#pragma once

#include <cstdint>

namespace usdn {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
// op(A) is M x K, op(B) is K x N, C is M x N.
// Backed by OpenBLAS when built with USDN_WITH_OPENBLAS (the default);
// set USDN_GEMM=builtin to force the portable fallback, which partitions
// rows across threads with a serial inner reduction and is bitwise
// reproducible for any thread count.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          float alpha, const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc);

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc);

}  // namespace usdn
