#include "rollcast/diff/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>

// Each parallel kernel keeps the serial accumulation order per output element,
// so results are bit-identical to the reference for any thread count.

namespace rollcast::diff::kernels {

namespace omp {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b.data() + p * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        serial::softmax_rows(1, n, x.subspan(i * n, n), y.subspan(i * n, n));
    }
}

void layer_norm_rows(std::size_t m, std::size_t n, double eps, std::span<const double> x,
                     std::span<double> y, std::span<double> inv_std) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        serial::layer_norm_rows(1, n, eps, x.subspan(i * n, n), y.subspan(i * n, n),
                                inv_std.subspan(i, 1));
    }
}

}  // namespace omp

namespace {
std::atomic<bool> parallel_enabled{true};
bool go_parallel(std::size_t work) { return work >= kParallelThreshold && parallel_enabled.load(std::memory_order_relaxed); }
}  // namespace

void set_parallel(bool enabled) { parallel_enabled.store(enabled, std::memory_order_relaxed); }
bool parallel() { return parallel_enabled.load(std::memory_order_relaxed); }

namespace {
}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    if (go_parallel(m * n * k)) omp::gemm_nn(m, n, k, a, b, c);
    else serial::gemm_nn(m, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    if (go_parallel(m * n * k)) omp::gemm_nt(m, n, k, a, b, c);
    else serial::gemm_nt(m, n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    // The serial reference walks p outermost; keep it for small problems only.
    if (go_parallel(m * n * k)) omp::gemm_tn(m, n, k, a, b, c);
    else serial::gemm_tn(m, n, k, a, b, c);
}

void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y) {
    if (go_parallel(m * n * 8)) omp::softmax_rows(m, n, x, y);
    else serial::softmax_rows(m, n, x, y);
}

void layer_norm_rows(std::size_t m, std::size_t n, double eps, std::span<const double> x,
                     std::span<double> y, std::span<double> inv_std) {
    if (go_parallel(m * n * 8)) omp::layer_norm_rows(m, n, eps, x, y, inv_std);
    else serial::layer_norm_rows(m, n, eps, x, y, inv_std);
}

}  // namespace rollcast::diff::kernels
