#pragma once

#include <cstddef>

namespace emvae::nn {

namespace detail {

// 8-lane double vector (GCC/Clang vector extension); lowers to whatever SIMD
// width the target offers.
typedef double vec8 __attribute__((vector_size(64)));

inline vec8 load8(const double* p) {
    vec8 v;
    __builtin_memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(double* p, vec8 v) { __builtin_memcpy(p, &v, sizeof v); }

template <std::size_t Rows, std::size_t Vecs>
inline void gemm_tile_simd(std::size_t K, const double* A, std::size_t lda, const double* B, std::size_t ldb,
                           double* C, std::size_t ldc) {
    vec8 acc[Rows][Vecs];
    for (std::size_t r = 0; r < Rows; ++r)
        for (std::size_t v = 0; v < Vecs; ++v) acc[r][v] = load8(C + r * ldc + 8 * v);
    for (std::size_t k = 0; k < K; ++k) {
        vec8 b[Vecs];
        for (std::size_t v = 0; v < Vecs; ++v) b[v] = load8(B + k * ldb + 8 * v);
        for (std::size_t r = 0; r < Rows; ++r) {
            const double a = A[r * lda + k];
            for (std::size_t v = 0; v < Vecs; ++v) acc[r][v] += a * b[v];
        }
    }
    for (std::size_t r = 0; r < Rows; ++r)
        for (std::size_t v = 0; v < Vecs; ++v) store8(C + r * ldc + 8 * v, acc[r][v]);
}

template <std::size_t Rows>
inline void gemm_tile_scalar(std::size_t K, const double* A, std::size_t lda, const double* B, std::size_t ldb,
                             double* C, std::size_t ldc) {
    double acc[Rows];
    for (std::size_t r = 0; r < Rows; ++r) acc[r] = C[r * ldc];
    for (std::size_t k = 0; k < K; ++k) {
        const double b = B[k * ldb];
        for (std::size_t r = 0; r < Rows; ++r) acc[r] += A[r * lda + k] * b;
    }
    for (std::size_t r = 0; r < Rows; ++r) C[r * ldc] = acc[r];
}

template <std::size_t Rows>
inline void gemm_row_block(std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
                           std::size_t ldb, double* C, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 16 <= N; j += 16) gemm_tile_simd<Rows, 2>(K, A, lda, B + j, ldb, C + j, ldc);
    for (; j + 8 <= N; j += 8) gemm_tile_simd<Rows, 1>(K, A, lda, B + j, ldb, C + j, ldc);
    for (; j < N; ++j) gemm_tile_scalar<Rows>(K, A, lda, B + j, ldb, C + j, ldc);
}

} // namespace detail

// C[M,N] += A[M,K] * B[K,N] (row-major, explicit leading dimensions).
// Every element accumulates its K products in ascending k order starting
// from the incoming C value, independent of the tiling.
inline void gemm_accumulate(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                            const double* B, std::size_t ldb, double* C, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 8 <= M; i += 8) detail::gemm_row_block<8>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc);
    for (; i + 4 <= M; i += 4) detail::gemm_row_block<4>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc);
    for (; i < M; ++i) detail::gemm_row_block<1>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc);
}

// out[cols, rows] = in[rows, cols]^T
inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

} // namespace emvae::nn
