#include "ddrnet/gemm.hpp"

#include <algorithm>
#include <cstring>

namespace ddrnet::gemm {
namespace {

#if defined(__AVX512F__)
constexpr int kVecBytes = 64;
constexpr int MR = 8;
#elif defined(__AVX__)
constexpr int kVecBytes = 32;
constexpr int MR = 6;
#else
constexpr int kVecBytes = 16;
constexpr int MR = 6;
#endif

constexpr int kLanes = kVecBytes / static_cast<int>(sizeof(float));
constexpr int NR = 2 * kLanes;
constexpr int64_t KC = 256;

using vf = float __attribute__((vector_size(kVecBytes)));

inline vf load(const float* p) {
  vf v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store(float* p, vf v) { std::memcpy(p, &v, sizeof v); }

inline int64_t round_up(int64_t x, int64_t m) { return (x + m - 1) / m * m; }

// Full MR x NR tile of C at c (row stride ldc).
inline void kernel(int64_t kc, const float* __restrict a, const float* __restrict b, float* c, int64_t ldc,
                   bool accumulate) {
  vf lo[MR], hi[MR];
  if (accumulate) {
    for (int r = 0; r < MR; ++r) {
      lo[r] = load(c + r * ldc);
      hi[r] = load(c + r * ldc + kLanes);
    }
  } else {
    for (int r = 0; r < MR; ++r) {
      lo[r] = vf{};
      hi[r] = vf{};
    }
  }
  for (int64_t k = 0; k < kc; ++k) {
    const vf b0 = load(b + k * NR);
    const vf b1 = load(b + k * NR + kLanes);
    const float* ak = a + k * MR;
    for (int r = 0; r < MR; ++r) {
      lo[r] += ak[r] * b0;
      hi[r] += ak[r] * b1;
    }
  }
  for (int r = 0; r < MR; ++r) {
    store(c + r * ldc, lo[r]);
    store(c + r * ldc + kLanes, hi[r]);
  }
}

// Partial tile: run the full kernel on a scratch tile, copy the valid corner.
inline void kernel_edge(int64_t kc, const float* a, const float* b, float* c, int64_t ldc, bool accumulate, int mr,
                        int nr) {
  alignas(64) float tmp[MR * NR] = {};
  if (accumulate) {
    for (int r = 0; r < mr; ++r) std::memcpy(tmp + r * NR, c + r * ldc, sizeof(float) * static_cast<size_t>(nr));
  }
  kernel(kc, a, b, tmp, NR, accumulate);
  for (int r = 0; r < mr; ++r) std::memcpy(c + r * ldc, tmp + r * NR, sizeof(float) * static_cast<size_t>(nr));
}

void pack_b(const float* b, int64_t ldb, int64_t kc, int64_t n, float* out) {
  for (int64_t j = 0; j < n; j += NR) {
    const int64_t nr = std::min<int64_t>(NR, n - j);
    float* dst = out + (j / NR) * kc * NR;
    for (int64_t k = 0; k < kc; ++k) {
      const float* src = b + k * ldb + j;
      float* d = dst + k * NR;
      if (nr == NR) {
        std::memcpy(d, src, sizeof(float) * NR);
      } else {
        std::memcpy(d, src, sizeof(float) * static_cast<size_t>(nr));
        std::fill(d + nr, d + NR, 0.0f);
      }
    }
  }
}

}  // namespace

int tile_rows() { return MR; }
int tile_cols() { return NR; }

PackedA pack_a(const float* a, int64_t m, int64_t k, int64_t lda) {
  PackedA p;
  p.m = m;
  p.k = k;
  const int64_t mpad = round_up(m, MR);
  p.data.assign(static_cast<size_t>(mpad * k), 0.0f);
  for (int64_t pc = 0; pc < k; pc += KC) {
    const int64_t kc = std::min(KC, k - pc);
    float* block = p.data.data() + pc * mpad;
    for (int64_t s = 0; s < mpad / MR; ++s) {
      float* strip = block + s * MR * kc;
      for (int r = 0; r < MR; ++r) {
        const int64_t row = s * MR + r;
        if (row >= m) break;
        const float* src = a + row * lda + pc;
        for (int64_t kk = 0; kk < kc; ++kk) strip[kk * MR + r] = src[kk];
      }
    }
  }
  return p;
}

void multiply(const PackedA& a, const float* b, int64_t ldb, int64_t n, float* c, int64_t ldc) {
  const int64_t m = a.m;
  const int64_t k = a.k;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0f);
    return;
  }
  const int64_t mpad = round_up(m, MR);
  thread_local std::vector<float> bp;
  bp.resize(static_cast<size_t>(std::min(KC, k) * round_up(n, NR)));

  for (int64_t pc = 0; pc < k; pc += KC) {
    const int64_t kc = std::min(KC, k - pc);
    pack_b(b + pc * ldb, ldb, kc, n, bp.data());
    const float* ablock = a.data.data() + pc * mpad;
    const bool acc = pc > 0;
    for (int64_t j = 0; j < n; j += NR) {
      const int nr = static_cast<int>(std::min<int64_t>(NR, n - j));
      const float* bstrip = bp.data() + (j / NR) * kc * NR;
      for (int64_t i = 0; i < m; i += MR) {
        const int mr = static_cast<int>(std::min<int64_t>(MR, m - i));
        const float* astrip = ablock + (i / MR) * MR * kc;
        float* ct = c + i * ldc + j;
        if (mr == MR && nr == NR) {
          kernel(kc, astrip, bstrip, ct, ldc, acc);
        } else {
          kernel_edge(kc, astrip, bstrip, ct, ldc, acc, mr, nr);
        }
      }
    }
  }
}

void multiply(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b, int64_t ldb, float* c,
              int64_t ldc) {
  multiply(pack_a(a, m, k, lda), b, ldb, n, c, ldc);
}

}  // namespace ddrnet::gemm
