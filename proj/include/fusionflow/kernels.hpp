#pragma once

// Raw loops behind the convolution primitives. All matrices are row-major and
// every routine accumulates into its output (C += ...).

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace fusionflow::kernels {

inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> n{1};
  return n;
}

inline void set_num_threads(unsigned n) {
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  thread_setting().store(n);
}
inline unsigned num_threads() { return thread_setting().load(); }

/// Runs fn(i) for i in [begin, end). Work is split into contiguous chunks, one per
/// thread; callers only pass loops whose iterations write disjoint outputs, so the
/// result never depends on the thread count.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t min_chunk, Fn&& fn) {
  const std::size_t n = end > begin ? end - begin : 0;
  const std::size_t threads = std::min<std::size_t>(num_threads(), min_chunk ? n / min_chunk : n);
  if (threads <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = begin + t * chunk, hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  parallel_for(0, M, 8, [&](std::size_t i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T(0)) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  });
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  parallel_for(0, M, 8, [&](std::size_t i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  });
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  parallel_for(0, M, 8, [&](std::size_t i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = A[k * M + i];
      if (av == T(0)) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  });
}

/// Geometry of a strided, zero-padded square-kernel convolution over one image.
struct ConvGeometry {
  std::size_t channels, height, width;  // of the convolution input
  std::size_t kernel, stride, pad;
  std::size_t out_height, out_width;

  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_height * out_width; }
};

// col[C*k*k, Ho*Wo] = patches of img[C,H,W]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  const std::ptrdiff_t H = g.height, W = g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.col_cols();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* r = row + oy * g.out_width;
          if (iy < 0 || iy >= H) {
            std::fill(r, r + g.out_width, T(0));
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            r[ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// img[C,H,W] += scatter of col[C*k*k, Ho*Wo]
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
  const std::ptrdiff_t H = g.height, W = g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.col_cols();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= H) continue;
          const T* r = row + oy * g.out_width;
          T* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < W) dst[ix] += r[ox];
          }
        }
      }
    }
  }
}

}  // namespace fusionflow::kernels
