#pragma once

// Dense double-precision vector kernels used by the tensor engine.
//
// Every kernel has a scalar reference implementation. SIMD variants (AVX2+FMA
// on x86-64, NEON on AArch64) are compiled into separate translation units and
// selected once per process from the running CPU's capabilities. Setting
// CTN_KERNELS=scalar in the environment forces the reference path.
//
// Reductions (dot, sum) in SIMD variants accumulate in a different order than
// the scalar loop, so results agree to rounding, not bit-for-bit. Within one
// process the selection is fixed, which keeps training runs reproducible.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace ctn::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = a + b
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  // out = a * b (elementwise)
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // requires n >= 1
  double (*max)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif
#if defined(__aarch64__)
const KernelTable& neon_table();
#endif

bool supported(Isa isa);

/// Table for a specific ISA; throws std::invalid_argument if unsupported here.
const KernelTable& table(Isa isa);

/// Process-wide selected table.
const KernelTable& active();

/// ISAs that can run on this machine, scalar first.
std::vector<Isa> available();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

// C[m x n] += A[m x k] * B[k x n], all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);

}  // namespace ctn::kernels
