#include "ctn/kernels/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace ctn::kernels {

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw std::invalid_argument("kernel ISA not supported on this CPU: " +
                                std::string(to_string(isa)));
  }
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::avx2: return avx2_table();
#endif
#if defined(__aarch64__)
    case Isa::neon: return neon_table();
#endif
    default: return scalar_table();
  }
}

std::vector<Isa> available() {
  std::vector<Isa> out{Isa::scalar};
  for (Isa isa : {Isa::avx2, Isa::neon}) {
    if (supported(isa)) out.push_back(isa);
  }
  return out;
}

namespace {

const KernelTable& select() {
  if (const char* forced = std::getenv("CTN_KERNELS")) {
    std::string_view f(forced);
    if (f == "scalar") return scalar_table();
    if (f == "avx2" && supported(Isa::avx2)) return table(Isa::avx2);
    if (f == "neon" && supported(Isa::neon)) return table(Isa::neon);
  }
  if (supported(Isa::avx2)) return table(Isa::avx2);
  if (supported(Isa::neon)) return table(Isa::neon);
  return scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& t = select();
  return t;
}

void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  const auto& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av != 0.0) kt.axpy(av, b + p * n, crow, n);
    }
  }
}

void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  const auto& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += kt.dot(a + i * k, b + j * k, k);
  }
}

void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  const auto& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av != 0.0) kt.axpy(av, b + i * n, c + p * n, n);
    }
  }
}

}  // namespace ctn::kernels
