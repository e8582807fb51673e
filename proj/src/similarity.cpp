#include "vlfuse/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif

namespace vlfuse::simd {

namespace {

#if defined(__AVX512F__)

constexpr const char* kKernel = "avx512";

struct Isa {
  using V = __m512;
  static constexpr int kWidth = 16;
  static constexpr int kTileRefs = 12;
  static V zero() noexcept { return _mm512_setzero_ps(); }
  static V load(const float* p) noexcept { return _mm512_load_ps(p); }
  static void store(float* p, V v) noexcept { _mm512_store_ps(p, v); }
  static V bcast(const float* p) noexcept { return _mm512_set1_ps(*p); }
  static V fma(V a, V b, V c) noexcept { return _mm512_fmadd_ps(a, b, c); }
};

#elif defined(__AVX2__) && defined(__FMA__)

constexpr const char* kKernel = "avx2";

struct Isa {
  using V = __m256;
  static constexpr int kWidth = 8;
  static constexpr int kTileRefs = 6;
  static V zero() noexcept { return _mm256_setzero_ps(); }
  static V load(const float* p) noexcept { return _mm256_load_ps(p); }
  static void store(float* p, V v) noexcept { _mm256_store_ps(p, v); }
  static V bcast(const float* p) noexcept { return _mm256_broadcast_ss(p); }
  static V fma(V a, V b, V c) noexcept { return _mm256_fmadd_ps(a, b, c); }
};

#else

constexpr const char* kKernel = "scalar";

struct Isa {
  using V = float;
  static constexpr int kWidth = 1;
  static constexpr int kTileRefs = 4;
  static V zero() noexcept { return 0.0f; }
  static V load(const float* p) noexcept { return *p; }
  static void store(float* p, V v) noexcept { *p = v; }
  static V bcast(const float* p) noexcept { return *p; }
  static V fma(V a, V b, V c) noexcept { return std::fma(a, b, c); }
};

#endif

// Each group holds two registers' worth of queries.
constexpr std::size_t kPanelWidth = 2 * Isa::kWidth;
// Terms per pass over a reference tile; the query slice (kSliceTerms x panel width) stays in L1.
constexpr std::size_t kSliceTerms = 128;
constexpr std::size_t kAlign = 64;

// acc(m, v) covers panel lanes [v*width, (v+1)*width) against reference m.
// c is laid out [reference][panel lane].
template <int MR>
inline void micro(const float* panel, const float* refs, std::size_t ld_ref, std::size_t len, float* c,
                  bool fresh) noexcept {
  typename Isa::V acc[MR][2];
  for (int m = 0; m < MR; ++m) {
    for (int v = 0; v < 2; ++v) acc[m][v] = fresh ? Isa::zero() : Isa::load(c + m * kPanelWidth + v * Isa::kWidth);
  }
  for (std::size_t j = 0; j < len; ++j) {
    const auto q0 = Isa::load(panel + j * kPanelWidth);
    const auto q1 = Isa::load(panel + j * kPanelWidth + Isa::kWidth);
    for (int m = 0; m < MR; ++m) {
      const auto b = Isa::bcast(refs + m * ld_ref + j);
      acc[m][0] = Isa::fma(q0, b, acc[m][0]);
      acc[m][1] = Isa::fma(q1, b, acc[m][1]);
    }
  }
  for (int m = 0; m < MR; ++m) {
    for (int v = 0; v < 2; ++v) Isa::store(c + m * kPanelWidth + v * Isa::kWidth, acc[m][v]);
  }
}

template <int MR>
inline void micro_any(int mr, const float* panel, const float* refs, std::size_t ld_ref, std::size_t len, float* c,
                      bool fresh) noexcept {
  if constexpr (MR > 1) {
    if (mr < MR) return micro_any<MR - 1>(mr, panel, refs, ld_ref, len, c, fresh);
  }
  micro<MR>(panel, refs, ld_ref, len, c, fresh);
}

float* align_up(float* p) noexcept {
  const auto addr = reinterpret_cast<std::uintptr_t>(p);
  return reinterpret_cast<float*>((addr + kAlign - 1) & ~(std::uintptr_t{kAlign} - 1));
}

struct Scratch {
  std::vector<float> block;
  std::vector<float> total;

  static float* aligned(std::vector<float>& v, std::size_t count) {
    if (v.size() < count + kAlign / sizeof(float)) v.resize(count + kAlign / sizeof(float));
    return align_up(v.data());
  }
};

}  // namespace

float dot_reference(const float* a, const float* b, std::size_t d) noexcept {
  float total = 0.0f;
  for (std::size_t b0 = 0; b0 < d; b0 += kAccumulationBlock) {
    const std::size_t b1 = std::min(d, b0 + kAccumulationBlock);
    float s = 0.0f;
    for (std::size_t j = b0; j < b1; ++j) s = std::fma(a[j], b[j], s);
    total = b0 == 0 ? s : total + s;
  }
  return total;
}

std::size_t QueryPanel::width() noexcept { return kPanelWidth; }

void QueryPanel::pack(const float* queries, std::size_t nq, std::size_t d) {
  nq_ = nq;
  d_ = d;
  groups_ = (nq + kPanelWidth - 1) / kPanelWidth;
  const std::size_t count = groups_ * d * kPanelWidth;
  storage_.assign(count + kAlign / sizeof(float), 0.0f);
  base_ = align_up(storage_.data());
  for (std::size_t g = 0; g < groups_; ++g) {
    float* dst = base_ + g * d * kPanelWidth;
    const std::size_t lanes = std::min(kPanelWidth, nq - g * kPanelWidth);
    for (std::size_t w = 0; w < lanes; ++w) {
      const float* src = queries + (g * kPanelWidth + w) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j * kPanelWidth + w] = src[j];
    }
  }
}

void dot_block(const QueryPanel& panel, const float* refs, std::size_t nr, float* out, std::size_t ld_out) {
  const std::size_t d = panel.dim();
  const std::size_t nq = panel.queries();
  if (nq == 0 || nr == 0) return;
  if (d == 0) {
    for (std::size_t i = 0; i < nq; ++i) std::fill(out + i * ld_out, out + i * ld_out + nr, 0.0f);
    return;
  }
  thread_local Scratch scratch;
  const std::size_t span = nr * kPanelWidth;
  float* block = Scratch::aligned(scratch.block, span);
  const bool several_blocks = d > kAccumulationBlock;
  float* total = several_blocks ? Scratch::aligned(scratch.total, span) : block;
  constexpr int kTile = Isa::kTileRefs;

  for (std::size_t g = 0; g < panel.groups(); ++g) {
    const float* gp = panel.group(g);
    for (std::size_t b0 = 0; b0 < d; b0 += kAccumulationBlock) {
      const std::size_t b1 = std::min(d, b0 + kAccumulationBlock);
      for (std::size_t s0 = b0; s0 < b1; s0 += kSliceTerms) {
        const std::size_t len = std::min(kSliceTerms, b1 - s0);
        const float* slice = gp + s0 * kPanelWidth;
        for (std::size_t t = 0; t < nr; t += kTile) {
          const int mr = static_cast<int>(std::min<std::size_t>(kTile, nr - t));
          micro_any<kTile>(mr, slice, refs + t * d + s0, d, len, block + t * kPanelWidth, s0 == b0);
        }
      }
      if (several_blocks) {
        if (b0 == 0) {
          std::memcpy(total, block, span * sizeof(float));
        } else {
          for (std::size_t e = 0; e < span; ++e) total[e] = total[e] + block[e];
        }
      }
    }
    const std::size_t lanes = std::min(kPanelWidth, nq - g * kPanelWidth);
    for (std::size_t w = 0; w < lanes; ++w) {
      float* row = out + (g * kPanelWidth + w) * ld_out;
      for (std::size_t j = 0; j < nr; ++j) row[j] = total[j * kPanelWidth + w];
    }
  }
}

void dot_block(const float* queries, std::size_t nq, const float* refs, std::size_t nr, std::size_t d, float* out,
               std::size_t ld_out) {
  const QueryPanel panel(queries, nq, d);
  dot_block(panel, refs, nr, out, ld_out);
}

double dot_exact(const float* a, const float* b, std::size_t d) noexcept {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(a[j]) * b[j];
  return s;
}

double cosine_error_bound(std::size_t d) noexcept {
  const std::size_t per_block = std::min(d, kAccumulationBlock);
  const std::size_t blocks = (d + kAccumulationBlock - 1) / kAccumulationBlock;
  constexpr double unit = 0x1p-24;
  // sequential accumulation + block sums + query/reference norm scaling
  return 2.0 * static_cast<double>(per_block + blocks + 8) * unit;
}

std::string_view kernel_name() noexcept { return kKernel; }

}  // namespace vlfuse::simd
