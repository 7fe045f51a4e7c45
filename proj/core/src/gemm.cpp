#include "gemm.hpp"

#include <vector>

namespace fer::detail {
namespace {

// One R x C block of C, reduced over k into a zeroed register tile. Every
// block width uses the same per-element order.
template <std::size_t R, std::size_t C>
inline void tile(std::size_t i0, std::size_t j0, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  double acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[(i0 + r) * k + p];
      for (std::size_t jj = 0; jj < C; ++jj) acc[r][jj] += av * brow[jj];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    double* crow = c + (i0 + r) * n + j0;
    for (std::size_t jj = 0; jj < C; ++jj) crow[jj] += acc[r][jj];
  }
}

template <std::size_t R>
inline void row_block(std::size_t i0, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) tile<R, 8>(i0, j, n, k, a, b, c);
  for (; j + 4 <= n; j += 4) tile<R, 4>(i0, j, n, k, a, b, c);
  for (; j < n; ++j) tile<R, 1>(i0, j, n, k, a, b, c);
}

std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<4>(i, n, k, a, b, c);
  for (; i < m; ++i) row_block<1>(i, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  auto& bt = scratch();
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  auto& at = scratch();
  at.resize(m * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  }
  gemm_nn(m, n, k, at.data(), b, c);
}

}  // namespace fer::detail
