#pragma once

#include <cstdint>

namespace dod {

// Dense double GEMMs, accumulating into C (M x N, row-major).
// nn: C += A(MxK) * B(KxN)
// nt: C += A(MxK) * B(NxK)^T
// tn: C += A(KxM)^T * B(KxN)
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C);
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C);
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C);

}  // namespace dod
