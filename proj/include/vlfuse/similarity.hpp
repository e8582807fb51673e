#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace vlfuse::simd {

/// Every dot product in the engine is evaluated with the same arithmetic,
/// whatever the instruction set or tile position:
///
///   - terms are grouped into blocks of at most kAccumulationBlock;
///   - inside a block, terms are accumulated in increasing index order with
///     single-precision fused multiply-adds, starting from zero;
///   - block sums are added left to right.
///
/// The vector kernels parallelise over (query, reference) pairs rather than
/// over terms, so each pair sees exactly this chain of operations and results
/// are bit-identical across AVX-512, AVX2 and scalar builds and independent of
/// how work is split between threads.
inline constexpr std::size_t kAccumulationBlock = 4096;

/// Scalar rendition of the canonical order.
float dot_reference(const float* a, const float* b, std::size_t d) noexcept;

inline float dot(const float* a, const float* b, std::size_t d) noexcept { return dot_reference(a, b, d); }

/// Queries re-laid out for the blocked kernel: groups of panel_width() queries,
/// interleaved term by term. Padding queries are zero and never reported.
class QueryPanel {
 public:
  QueryPanel() = default;
  QueryPanel(const float* queries, std::size_t nq, std::size_t d) { pack(queries, nq, d); }

  void pack(const float* queries, std::size_t nq, std::size_t d);

  std::size_t queries() const noexcept { return nq_; }
  std::size_t dim() const noexcept { return d_; }
  std::size_t groups() const noexcept { return groups_; }
  const float* group(std::size_t g) const noexcept { return base_ + g * d_ * width(); }

  static std::size_t width() noexcept;

 private:
  std::vector<float> storage_;
  float* base_ = nullptr;
  std::size_t nq_ = 0;
  std::size_t d_ = 0;
  std::size_t groups_ = 0;
};

/// out[i * ld_out + j] = dot(query i, refs + j*d) for every packed query i and j < nr.
void dot_block(const QueryPanel& panel, const float* refs, std::size_t nr, float* out, std::size_t ld_out);

/// Same for row-major queries (packs them first).
void dot_block(const float* queries, std::size_t nq, const float* refs, std::size_t nr, std::size_t d, float* out,
               std::size_t ld_out);

/// Double-precision dot product, sequential accumulation.
double dot_exact(const float* a, const float* b, std::size_t d) noexcept;

/// Upper bound on |dot() - exact| / (|a| |b|), padded for the extra roundings
/// applied when a dot product is scaled into a cosine.
double cosine_error_bound(std::size_t d) noexcept;

std::string_view kernel_name() noexcept;

}  // namespace vlfuse::simd
