#pragma once

#include <cstdint>

namespace kgforge {

#ifdef KGFORGE_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

// Dense kernels behind the autodiff primitives. Each kernel has an
// OpenMP-parallel version (the default) and a serial reference used by the
// tests and the benchmark. Both variants accumulate every output element in
// the same index order, so their results are bit-identical for any thread
// count; run-to-run determinism does not depend on OMP_NUM_THREADS.
namespace kernels {

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn(const real* a, const real* b, real* c, int m, int k, int n);
void matmul_nn_serial(const real* a, const real* b, real* c, int m, int k, int n);

// c[m,k] += a[m,n] * b[k,n]^T   (dA of a matmul backward)
void matmul_nt_acc(const real* a, const real* b, real* c, int m, int n, int k);
void matmul_nt_acc_serial(const real* a, const real* b, real* c, int m, int n, int k);

// c[k,n] += a[m,k]^T * b[m,n]   (dB of a matmul backward)
void matmul_tn_acc(const real* a, const real* b, real* c, int m, int k, int n);
void matmul_tn_acc_serial(const real* a, const real* b, real* c, int m, int k, int n);

// y[i] = x[i] * w + y0[i]; used by fused elementwise loops where profitable.
void axpby(const real* x, real w, real* y, std::int64_t n);

}  // namespace kernels
}  // namespace kgforge
