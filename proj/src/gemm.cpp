#include "usdn/core/gemm.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <vector>

#include "usdn/core/parallel.hpp"

#ifdef USDN_WITH_OPENBLAS
#include <cblas-openblas.h>
#endif

namespace usdn {
namespace {

bool use_builtin() {
#ifdef USDN_WITH_OPENBLAS
  static const bool builtin = [] {
    const char* env = std::getenv("USDN_GEMM");
    return env != nullptr && std::strcmp(env, "builtin") == 0;
  }();
  return builtin;
#else
  return true;
#endif
}

#ifdef USDN_WITH_OPENBLAS
// OpenBLAS is built DYNAMIC_ARCH and cannot identify some virtualized CPUs;
// it then falls back to a Prescott (SSE3) kernel. Select the Haswell kernel
// when the CPU actually has AVX2+FMA and the user has not chosen a core type.
void init_openblas_once() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (std::getenv("OPENBLAS_CORETYPE") == nullptr &&
        __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
      setenv("OPENBLAS_CORETYPE", "Haswell", 0);
    }
  });
}
#endif

// Portable fallback: rows of C are partitioned across threads, each output
// element is one serial dot product, so the result is independent of the
// thread count.
template <typename T>
void gemm_builtin(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                  T alpha, const T* a, int64_t lda, const T* b, int64_t ldb,
                  T beta, T* c, int64_t ldc) {
  parallel_for_grain(m, 8, [&](int64_t i0, int64_t i1) {
    std::vector<T> acc(static_cast<size_t>(n));
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * ldc;
      for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] = T(0);
      for (int64_t p = 0; p < k; ++p) {
        T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        if (trans_b) {
          for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * b[j * ldb + p];
        } else {
          const T* brow = b + p * ldb;
          for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
        }
      }
      if (beta == T(0)) {
        for (int64_t j = 0; j < n; ++j) crow[j] = alpha * acc[static_cast<size_t>(j)];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] = alpha * acc[static_cast<size_t>(j)] + beta * crow[j];
      }
    }
  });
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          float alpha, const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc) {
  if (m == 0 || n == 0) return;
#ifdef USDN_WITH_OPENBLAS
  if (!use_builtin()) {
    init_openblas_once();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
                static_cast<blasint>(n), static_cast<blasint>(k), alpha, a,
                static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta, c,
                static_cast<blasint>(ldc));
    return;
  }
#endif
  gemm_builtin(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc) {
  if (m == 0 || n == 0) return;
#ifdef USDN_WITH_OPENBLAS
  if (!use_builtin()) {
    init_openblas_once();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
                static_cast<blasint>(n), static_cast<blasint>(k), alpha, a,
                static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta, c,
                static_cast<blasint>(ldc));
    return;
  }
#endif
  gemm_builtin(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace usdn
