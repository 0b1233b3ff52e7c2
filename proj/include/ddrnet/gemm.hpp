#pragma once

#include <cstdint>
#include <vector>

namespace ddrnet::gemm {

/// Left operand repacked into register-tile strips, one K block at a time.
/// Built once per weight matrix and reused for every right operand.
struct PackedA {
  int64_t m = 0;
  int64_t k = 0;
  std::vector<float> data;
};

PackedA pack_a(const float* a, int64_t m, int64_t k, int64_t lda);

/// C[m x n] = A[m x k] * B[k x n], overwriting C. Each C element sums its k
/// products in ascending k order starting from zero, whatever n or the
/// caller's column split, so results do not depend on how work is divided.
void multiply(const PackedA& a, const float* b, int64_t ldb, int64_t n, float* c, int64_t ldc);

/// Unpacked convenience form.
void multiply(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b, int64_t ldb, float* c,
              int64_t ldc);

/// Register tile (rows x columns) of the compiled kernel, for diagnostics.
int tile_rows();
int tile_cols();

}  // namespace ddrnet::gemm
