#include "dod/gemm.hpp"

#include <algorithm>

namespace dod {

namespace {

constexpr int kMr = 4;  // rows per register tile
constexpr int kNr = 8;  // cols per register tile

// Explicit 4-wide vector type: the scalar tile loop does not reliably get
// auto-vectorized, and the difference is ~7x on this workload.
typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

// Full 4x8 tile; strides parameterize the A layout (gemm_nn vs gemm_tn).
inline void kernel_4x8(int K, const double* __restrict a0, int64_t a_row_stride,
                       int64_t a_k_stride, const double* __restrict b, int64_t b_stride,
                       double* __restrict c, int64_t c_stride) {
  v4d acc[kMr][2] = {};
  for (int k = 0; k < K; ++k) {
    const double* brow = b + k * b_stride;
    const v4d b0 = load4(brow);
    const v4d b1 = load4(brow + 4);
    for (int ii = 0; ii < kMr; ++ii) {
      const double a = a0[ii * a_row_stride + k * a_k_stride];
      const v4d av = {a, a, a, a};
      acc[ii][0] += av * b0;
      acc[ii][1] += av * b1;
    }
  }
  for (int ii = 0; ii < kMr; ++ii) {
    double* crow = c + ii * c_stride;
    for (int jj = 0; jj < 4; ++jj) {
      crow[jj] += acc[ii][0][jj];
      crow[jj + 4] += acc[ii][1][jj];
    }
  }
}

inline void kernel_edge(int K, int mi, int nj, const double* __restrict a0,
                        int64_t a_row_stride, int64_t a_k_stride, const double* __restrict b,
                        int64_t b_stride, double* __restrict c, int64_t c_stride) {
  double acc[kMr][kNr] = {};
  for (int k = 0; k < K; ++k) {
    const double* brow = b + k * b_stride;
    for (int ii = 0; ii < mi; ++ii) {
      const double a = a0[ii * a_row_stride + k * a_k_stride];
      for (int jj = 0; jj < nj; ++jj) acc[ii][jj] += a * brow[jj];
    }
  }
  for (int ii = 0; ii < mi; ++ii) {
    double* crow = c + ii * c_stride;
    for (int jj = 0; jj < nj; ++jj) crow[jj] += acc[ii][jj];
  }
}

inline void gemm_strided(int M, int N, int K, const double* A, int64_t a_row_stride,
                         int64_t a_k_stride, const double* B, double* C) {
  for (int i0 = 0; i0 + kMr <= M; i0 += kMr) {
    const double* a0 = A + i0 * a_row_stride;
    int j0 = 0;
    for (; j0 + kNr <= N; j0 += kNr)
      kernel_4x8(K, a0, a_row_stride, a_k_stride, B + j0, N, C + static_cast<int64_t>(i0) * N + j0, N);
    if (j0 < N)
      kernel_edge(K, kMr, N - j0, a0, a_row_stride, a_k_stride, B + j0, N,
                  C + static_cast<int64_t>(i0) * N + j0, N);
  }
  const int i0 = M - M % kMr;
  if (i0 < M) {
    const double* a0 = A + i0 * a_row_stride;
    for (int j0 = 0; j0 < N; j0 += kNr)
      kernel_edge(K, M - i0, std::min(kNr, N - j0), a0, a_row_stride, a_k_stride, B + j0, N,
                  C + static_cast<int64_t>(i0) * N + j0, N);
  }
}

}  // namespace

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, K, 1, B, C);
}

void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, 1, M, B, C);
}

void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C) {
  // dot products along contiguous K for both operands; 4 B-rows at a time
  for (int i = 0; i < M; ++i) {
    const double* __restrict arow = A + static_cast<int64_t>(i) * K;
    int j0 = 0;
    for (; j0 + kMr <= N; j0 += kMr) {
      const double* __restrict b0 = B + static_cast<int64_t>(j0) * K;
      const double* __restrict b1 = b0 + K;
      const double* __restrict b2 = b1 + K;
      const double* __restrict b3 = b2 + K;
      v4d s0 = {}, s1 = {}, s2 = {}, s3 = {};
      int k = 0;
      for (; k + 4 <= K; k += 4) {
        const v4d a = load4(arow + k);
        s0 += a * load4(b0 + k);
        s1 += a * load4(b1 + k);
        s2 += a * load4(b2 + k);
        s3 += a * load4(b3 + k);
      }
      double t0 = s0[0] + s0[1] + s0[2] + s0[3];
      double t1 = s1[0] + s1[1] + s1[2] + s1[3];
      double t2 = s2[0] + s2[1] + s2[2] + s2[3];
      double t3 = s3[0] + s3[1] + s3[2] + s3[3];
      for (; k < K; ++k) {
        const double a = arow[k];
        t0 += a * b0[k];
        t1 += a * b1[k];
        t2 += a * b2[k];
        t3 += a * b3[k];
      }
      double* crow = C + static_cast<int64_t>(i) * N + j0;
      crow[0] += t0;
      crow[1] += t1;
      crow[2] += t2;
      crow[3] += t3;
    }
    for (; j0 < N; ++j0) {
      const double* __restrict brow = B + static_cast<int64_t>(j0) * K;
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += arow[k] * brow[k];
      C[static_cast<int64_t>(i) * N + j0] += s;
    }
  }
}

}  // namespace dod
