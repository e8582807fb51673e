#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vlfuse/predictions.hpp"
#include "vlfuse/store.hpp"

namespace vlfuse {

/// k neighbours per query, best first: descending cosine, ties by ascending reference index.
class NeighborList {
 public:
  NeighborList() = default;
  NeighborList(std::size_t queries, std::size_t k)
      : queries_(queries), k_(k), indices_(queries * k), similarities_(queries * k) {}

  std::size_t queries() const noexcept { return queries_; }
  std::size_t k() const noexcept { return k_; }

  std::span<const std::uint32_t> indices(std::size_t q) const noexcept {
    return std::span<const std::uint32_t>(indices_).subspan(q * k_, k_);
  }
  std::span<const float> similarities(std::size_t q) const noexcept {
    return std::span<const float>(similarities_).subspan(q * k_, k_);
  }
  std::span<std::uint32_t> indices(std::size_t q) noexcept { return std::span<std::uint32_t>(indices_).subspan(q * k_, k_); }
  std::span<float> similarities(std::size_t q) noexcept { return std::span<float>(similarities_).subspan(q * k_, k_); }

  bool operator==(const NeighborList&) const = default;

 private:
  std::size_t queries_ = 0;
  std::size_t k_ = 0;
  std::vector<std::uint32_t> indices_;
  std::vector<float> similarities_;
};

struct KnnConfig {
  std::size_t k = 1;
  /// Queries per work item; the unit of parallelism.
  std::size_t query_batch = 256;
  /// 0 picks resolve_threads().
  std::size_t threads = 0;
};

/// For each query, the reference row sharing its sample id (if any); that row is never returned.
struct SelfExclusion {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> excluded;
};

SelfExclusion exclude_self(const EmbeddingStore& queries, const EmbeddingStore& refs);

/// Exact cosine top-k of every query row against every reference row.
///
/// Candidates are screened with the blocked single-precision kernel and the
/// frontier (everything within the kernel's rounding bound of the k-th score)
/// is re-ranked with double-precision cosines, so the result is the exact
/// ranking and does not depend on thread count or batch size.
/// Throws std::invalid_argument on dimension mismatch or k larger than the
/// number of eligible references.
NeighborList top_k(const EmbeddingStore& queries, const EmbeddingStore& refs, const KnnConfig& config,
                   const SelfExclusion* exclusion = nullptr);

/// Majority class among the first k neighbours. Ties go to the larger summed
/// similarity, then to the smaller class id.
ClassId vote(std::span<const std::uint32_t> indices, std::span<const float> similarities,
             std::span<const ClassId> ref_classes, std::size_t k);

/// As above; ref_labels must be single-label.
ClassId vote(const NeighborList& neighbors, std::size_t query, const LabelSet& ref_labels, std::size_t k);

PredictionSet classify_knn(const EmbeddingStore& queries, const EmbeddingStore& refs, const LabelSet& ref_labels,
                           const KnnConfig& config, const SelfExclusion* exclusion = nullptr);

/// Predictions for every k in a grid from one neighbour pass at the largest k.
PredictionSet predictions_at(const NeighborList& neighbors, const EmbeddingStore& queries,
                             std::span<const ClassId> ref_classes, std::size_t k, std::string variant);

struct SweepResult {
  std::vector<std::size_t> k_grid;
  std::vector<PredictionSet> predictions;
  /// Filled when evaluation labels were given; a prediction counts when it is in the sample's label set.
  std::vector<double> accuracy;
};

SweepResult sweep_k(const EmbeddingStore& queries, const EmbeddingStore& refs, const LabelSet& ref_labels,
                    std::span<const std::size_t> k_grid, const LabelSet* eval_labels, const KnnConfig& config,
                    const SelfExclusion* exclusion = nullptr);

/// Same, starting from a precomputed neighbour list with at least max(k_grid) columns.
SweepResult sweep_k(const NeighborList& neighbors, const EmbeddingStore& queries, const LabelSet& ref_labels,
                    std::span<const std::size_t> k_grid, const LabelSet* eval_labels);

/// {1, 3, 5, 7, 9, 11, 13, 51}
std::vector<std::size_t> default_k_grid();

/// Neighbour dumps reuse the store container: role=neighbors, one row of k
/// similarities per query, the label block holding reference indices.
struct NeighborDump {
  NeighborList neighbors;
  std::vector<std::string> query_ids;
  std::string query_sha256;
  std::string reference_sha256;
  bool self_excluded = false;
};

void save_neighbors(const NeighborDump& dump, std::size_t reference_rows, const std::filesystem::path& path);
NeighborDump load_neighbors(const std::filesystem::path& path);

}  // namespace vlfuse
