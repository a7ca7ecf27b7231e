#pragma once

// Dense batch kernels used by training and evaluation.
//
// kernels::parallel holds the OpenMP versions the model runs. Each output
// element is owned by exactly one thread and its reduction order is fixed, so
// results are bitwise independent of the thread count.
// kernels::serial holds straightforward reference loops kept for tests and
// the benchmark; they agree with the parallel versions to rounding.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace snqn::kernels {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Runs fn(i) for i in [0, n) across OpenMP threads; the first exception
/// thrown by any worker is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

/// Descending score, ties by ascending index.
template <typename T>
void top_k_indices(const T* scores, std::size_t n, std::size_t k, std::int32_t* out) {
  std::vector<std::int32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  auto better = [scores](std::int32_t a, std::int32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  std::copy(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), out);
}

namespace detail {

// Dot product with eight fixed partial sums; vectorizes without reassociation
// and has the same summation order on every call.
template <typename T>
inline T dot8(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  const std::size_t rem = n - i;
  for (std::size_t l = 0; l < 8 && l < rem; ++l) acc[l] += a[i + l] * b[i + l];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// y[0:n) += s * x[0:n)
template <typename T>
inline void axpy(T s, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

}  // namespace detail

namespace parallel {

/// y[b, :] = bias + x[b, :] . w   with x [B,K], w [K,N], bias [N] (may be null).
template <typename T>
void affine_rows(const T* x, std::size_t batch, std::size_t in, const T* w, const T* bias,
                 std::size_t out, T* y) {
  const auto nb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    T* yb = y + b * static_cast<std::int64_t>(out);
    if (bias) {
      std::copy(bias, bias + out, yb);
    } else {
      std::fill(yb, yb + out, T{0});
    }
    const T* xb = x + b * static_cast<std::int64_t>(in);
    for (std::size_t k = 0; k < in; ++k) {
      if (xb[k] != T{0}) detail::axpy(xb[k], w + k * out, yb, out);
    }
  }
}

/// g[k, :] += scale * sum_b x[b, k] * d[b, :]   with x [B,K], d [B,N], g [K,N].
template <typename T>
void accumulate_outer(const T* x, const T* d, std::size_t batch, std::size_t in,
                      std::size_t out, T scale, T* g) {
  const auto nk = static_cast<std::int64_t>(in);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < nk; ++k) {
    T* gk = g + k * static_cast<std::int64_t>(out);
    for (std::size_t b = 0; b < batch; ++b) {
      const T s = scale * x[b * in + static_cast<std::size_t>(k)];
      if (s != T{0}) detail::axpy(s, d + b * out, gk, out);
    }
  }
}

/// dx[b, k] = sum_n w[k, n] * d[b, n]   with d [B,N], w [K,N], dx [B,K].
template <typename T>
void backprop_rows(const T* d, std::size_t batch, std::size_t out, const T* w, std::size_t in,
                   T* dx) {
  const auto nb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    const T* db = d + b * static_cast<std::int64_t>(out);
    T* dxb = dx + b * static_cast<std::int64_t>(in);
    for (std::size_t k = 0; k < in; ++k) dxb[k] = detail::dot8(w + k * out, db, out);
  }
}

/// g[n] += scale * sum_b d[b, n]
template <typename T>
void column_sums(const T* d, std::size_t batch, std::size_t out, T scale, T* g) {
  constexpr std::size_t kChunk = 256;
  const auto nchunks = static_cast<std::int64_t>((out + kChunk - 1) / kChunk);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < nchunks; ++c) {
    const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
    const std::size_t hi = std::min(out, lo + kChunk);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* db = d + b * out;
      for (std::size_t n = lo; n < hi; ++n) g[n] += scale * db[n];
    }
  }
}

template <typename T>
void top_k_rows(const T* scores, std::size_t batch, std::size_t n, std::size_t k,
                std::int32_t* out) {
  const auto nb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    top_k_indices(scores + b * static_cast<std::int64_t>(n), n, k,
                  out + b * static_cast<std::int64_t>(k));
  }
}

}  // namespace parallel

namespace serial {

template <typename T>
void affine_rows(const T* x, std::size_t batch, std::size_t in, const T* w, const T* bias,
                 std::size_t out, T* y) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t n = 0; n < out; ++n) {
      T acc = bias ? bias[n] : T{0};
      for (std::size_t k = 0; k < in; ++k) acc += x[b * in + k] * w[k * out + n];
      y[b * out + n] = acc;
    }
  }
}

template <typename T>
void accumulate_outer(const T* x, const T* d, std::size_t batch, std::size_t in,
                      std::size_t out, T scale, T* g) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < in; ++k)
      for (std::size_t n = 0; n < out; ++n) g[k * out + n] += scale * x[b * in + k] * d[b * out + n];
}

template <typename T>
void backprop_rows(const T* d, std::size_t batch, std::size_t out, const T* w, std::size_t in,
                   T* dx) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < in; ++k) {
      T acc{0};
      for (std::size_t n = 0; n < out; ++n) acc += w[k * out + n] * d[b * out + n];
      dx[b * in + k] = acc;
    }
  }
}

template <typename T>
void column_sums(const T* d, std::size_t batch, std::size_t out, T scale, T* g) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < out; ++n) g[n] += scale * d[b * out + n];
}

/// Full stable sort, then truncate.
template <typename T>
void top_k_rows(const T* scores, std::size_t batch, std::size_t n, std::size_t k,
                std::int32_t* out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const T* s = scores + b * n;
    std::vector<std::int32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [s](std::int32_t a, std::int32_t c) { return s[a] > s[c]; });
    std::copy(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)),
              out + b * k);
  }
}

}  // namespace serial

}  // namespace snqn::kernels
