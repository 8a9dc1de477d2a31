#pragma once

// Dense row-major kernels. Every kernel exists twice: a plain serial loop nest
// kept as the reference, and an OpenMP version parallel over output rows. The
// dispatching entry points in namespace `kernels` pick the OpenMP path for
// problems large enough to amortise the fork.

#include <cstddef>
#include <span>

namespace rollcast::diff::kernels {

namespace serial {
// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y);
void layer_norm_rows(std::size_t m, std::size_t n, double eps, std::span<const double> x,
                     std::span<double> y, std::span<double> inv_std);
}  // namespace serial

namespace omp {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y);
void layer_norm_rows(std::size_t m, std::size_t n, double eps, std::span<const double> x,
                     std::span<double> y, std::span<double> inv_std);
}  // namespace omp

/// Turns the OpenMP path of the dispatchers on or off (on by default). Both
/// paths give bit-identical results.
void set_parallel(bool enabled);
bool parallel();

/// Work (multiply-adds) above which the dispatchers go parallel.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y);
void layer_norm_rows(std::size_t m, std::size_t n, double eps, std::span<const double> x,
                     std::span<double> y, std::span<double> inv_std);

}  // namespace rollcast::diff::kernels
