#include "kgforge/kernels.hpp"

namespace kgforge::kernels {

// Parallel loops split the outermost index; each output element is owned by
// exactly one thread and accumulated in ascending inner order, matching the
// serial variants bit for bit.

void matmul_nn(const real* a, const real* b, real* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        real* ci = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0;
        const real* ai = a + static_cast<std::int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real aip = ai[p];
            const real* bp = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nn_serial(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        real* ci = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0;
        const real* ai = a + static_cast<std::int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real aip = ai[p];
            const real* bp = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nt_acc(const real* a, const real* b, real* c, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const real* ai = a + static_cast<std::int64_t>(i) * n;
        real* ci = c + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const real* bj = b + static_cast<std::int64_t>(j) * n;
            real acc = 0;
            for (int p = 0; p < n; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

void matmul_nt_acc_serial(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const real* ai = a + static_cast<std::int64_t>(i) * n;
        real* ci = c + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const real* bj = b + static_cast<std::int64_t>(j) * n;
            real acc = 0;
            for (int p = 0; p < n; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

void matmul_tn_acc(const real* a, const real* b, real* c, int m, int k, int n) {
    // Parallel over rows of c (k of them); inner accumulation order over i is
    // ascending in both variants.
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
        real* cp = c + static_cast<std::int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const real aip = a[static_cast<std::int64_t>(i) * k + p];
            const real* bi = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

void matmul_tn_acc_serial(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        real* cp = c + static_cast<std::int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const real aip = a[static_cast<std::int64_t>(i) * k + p];
            const real* bi = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

void axpby(const real* x, real w, real* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += w * x[i];
}

}  // namespace kgforge::kernels
