#include "vlfuse/knn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "vlfuse/parallel.hpp"
#include "vlfuse/similarity.hpp"

namespace vlfuse {

namespace {

struct Candidate {
  float sim;
  std::uint32_t index;
};

// Better-first ordering used everywhere a ranking is produced.
inline bool better(float a_sim, std::uint32_t a_idx, float b_sim, std::uint32_t b_idx) noexcept {
  return a_sim > b_sim || (a_sim == b_sim && a_idx < b_idx);
}

// Bounded heap with the worst candidate on top. References are streamed in
// increasing index order, so a newcomer equal to the top never displaces it.
class BoundedHeap {
 public:
  explicit BoundedHeap(std::size_t capacity) : capacity_(capacity) { items_.reserve(capacity); }

  void offer(float sim, std::uint32_t index) {
    if (items_.size() < capacity_) {
      items_.push_back({sim, index});
      std::push_heap(items_.begin(), items_.end(), cmp);
    } else if (sim > items_.front().sim) {
      std::pop_heap(items_.begin(), items_.end(), cmp);
      items_.back() = {sim, index};
      std::push_heap(items_.begin(), items_.end(), cmp);
    }
  }

  bool full() const noexcept { return items_.size() == capacity_; }
  float worst() const noexcept { return items_.front().sim; }
  std::vector<Candidate>& items() noexcept { return items_; }

 private:
  static bool cmp(const Candidate& a, const Candidate& b) noexcept { return better(a.sim, a.index, b.sim, b.index); }

  std::size_t capacity_;
  std::vector<Candidate> items_;
};

struct RankedCandidate {
  double sim;
  std::uint32_t index;
};

// Extra screened candidates kept beyond k so the exact re-ranking rarely needs a rescan.
constexpr std::size_t kScreenPad = 32;

std::size_t ref_chunk_rows(std::size_t d) {
  // Keep a reference chunk around 384 KiB so it stays cache resident while a
  // batch of queries streams past it.
  const std::size_t rows = (384 * 1024) / (std::max<std::size_t>(d, 1) * sizeof(float));
  return std::clamp<std::size_t>(rows / 12 * 12, 12, 1020);
}

}  // namespace

SelfExclusion exclude_self(const EmbeddingStore& queries, const EmbeddingStore& refs) {
  std::unordered_map<std::string_view, std::uint32_t> where;
  where.reserve(refs.n());
  for (std::size_t j = 0; j < refs.n(); ++j) where.emplace(refs.sample_ids()[j], static_cast<std::uint32_t>(j));
  SelfExclusion out;
  out.excluded.resize(queries.n(), SelfExclusion::kNone);
  for (std::size_t i = 0; i < queries.n(); ++i) {
    if (auto it = where.find(queries.sample_ids()[i]); it != where.end()) out.excluded[i] = it->second;
  }
  return out;
}

NeighborList top_k(const EmbeddingStore& queries, const EmbeddingStore& refs, const KnnConfig& config,
                   const SelfExclusion* exclusion) {
  const std::size_t d = refs.d();
  const std::size_t nq = queries.n();
  const std::size_t nr = refs.n();
  const std::size_t k = config.k;
  if (queries.d() != d) {
    throw std::invalid_argument("query dimension " + std::to_string(queries.d()) + " differs from reference dimension " +
                                std::to_string(d));
  }
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (nr > std::numeric_limits<std::uint32_t>::max() - 1) throw std::invalid_argument("too many reference rows");
  if (exclusion && exclusion->excluded.size() != nq) throw std::invalid_argument("self-exclusion list does not match queries");
  const bool any_excluded =
      exclusion && std::any_of(exclusion->excluded.begin(), exclusion->excluded.end(),
                               [](std::uint32_t e) { return e != SelfExclusion::kNone; });
  const std::size_t eligible_min = any_excluded ? nr - 1 : nr;
  if (k > eligible_min) {
    throw std::invalid_argument("k=" + std::to_string(k) + " exceeds the " + std::to_string(eligible_min) +
                                " eligible reference rows");
  }

  NeighborList out(nq, k);
  if (nq == 0) return out;

  std::vector<double> ref_norm(nr);
  std::vector<float> ref_inv(nr);
  for (std::size_t j = 0; j < nr; ++j) {
    const auto* r = refs.row(j).data();
    ref_norm[j] = std::sqrt(simd::dot_exact(r, r, d));
    ref_inv[j] = static_cast<float>(1.0 / ref_norm[j]);
  }

  const double slack = 2.0 * simd::cosine_error_bound(d);
  const std::size_t batch = std::max<std::size_t>(1, config.query_batch);
  const std::size_t blocks = (nq + batch - 1) / batch;
  const std::size_t chunk = ref_chunk_rows(d);

  parallel_for(blocks, resolve_threads(config.threads), [&](std::size_t b) {
    const std::size_t q0 = b * batch;
    const std::size_t qn = std::min(batch, nq - q0);
    const float* qptr = queries.row(q0).data();

    std::vector<double> q_norm(qn);
    std::vector<float> q_inv(qn);
    std::vector<std::uint32_t> skip(qn, SelfExclusion::kNone);
    std::vector<BoundedHeap> heaps;
    heaps.reserve(qn);
    for (std::size_t i = 0; i < qn; ++i) {
      const float* q = qptr + i * d;
      q_norm[i] = std::sqrt(simd::dot_exact(q, q, d));
      q_inv[i] = static_cast<float>(1.0 / q_norm[i]);
      if (exclusion) skip[i] = exclusion->excluded[q0 + i];
      const std::size_t eligible = skip[i] == SelfExclusion::kNone ? nr : nr - 1;
      heaps.emplace_back(std::min(k + kScreenPad, eligible));
    }

    const simd::QueryPanel panel(qptr, qn, d);
    std::vector<float> scratch(qn * chunk);
    for (std::size_t r0 = 0; r0 < nr; r0 += chunk) {
      const std::size_t rn = std::min(chunk, nr - r0);
      simd::dot_block(panel, refs.row(r0).data(), rn, scratch.data(), rn);
      for (std::size_t i = 0; i < qn; ++i) {
        const float* row = scratch.data() + i * rn;
        auto& heap = heaps[i];
        const float qi = q_inv[i];
        for (std::size_t j = 0; j < rn; ++j) {
          const auto idx = static_cast<std::uint32_t>(r0 + j);
          if (idx == skip[i]) continue;
          heap.offer(row[j] * qi * ref_inv[r0 + j], idx);
        }
      }
    }

    std::vector<RankedCandidate> ranked;
    for (std::size_t i = 0; i < qn; ++i) {
      const float* q = qptr + i * d;
      auto& items = heaps[i].items();
      std::sort(items.begin(), items.end(),
                [](const Candidate& a, const Candidate& b) { return better(a.sim, a.index, b.sim, b.index); });
      const double threshold = static_cast<double>(items[k - 1].sim) - slack;

      ranked.clear();
      const std::size_t eligible = skip[i] == SelfExclusion::kNone ? nr : nr - 1;
      if (heaps[i].full() && items.size() < eligible && static_cast<double>(items.back().sim) >= threshold) {
        // The frontier spills past the screened set: rescan this query.
        const simd::QueryPanel single(q, 1, d);
        for (std::size_t r0 = 0; r0 < nr; r0 += chunk) {
          const std::size_t rn = std::min(chunk, nr - r0);
          simd::dot_block(single, refs.row(r0).data(), rn, scratch.data(), rn);
          for (std::size_t j = 0; j < rn; ++j) {
            if (r0 + j == skip[i]) continue;
            const float s = scratch[j] * q_inv[i] * ref_inv[r0 + j];
            if (static_cast<double>(s) >= threshold) ranked.push_back({0.0, static_cast<std::uint32_t>(r0 + j)});
          }
        }
      } else {
        for (const auto& c : items) {
          if (static_cast<double>(c.sim) >= threshold) ranked.push_back({0.0, c.index});
        }
      }
      for (auto& c : ranked) c.sim = simd::dot_exact(q, refs.row(c.index).data(), d) / (q_norm[i] * ref_norm[c.index]);
      std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(),
                        [](const RankedCandidate& a, const RankedCandidate& b) {
                          return a.sim > b.sim || (a.sim == b.sim && a.index < b.index);
                        });
      auto idx = out.indices(q0 + i);
      auto sim = out.similarities(q0 + i);
      for (std::size_t r = 0; r < k; ++r) {
        idx[r] = ranked[r].index;
        sim[r] = static_cast<float>(ranked[r].sim);
      }
    }
  });
  return out;
}

ClassId vote(std::span<const std::uint32_t> indices, std::span<const float> similarities,
             std::span<const ClassId> ref_classes, std::size_t k) {
  if (k == 0 || k > indices.size() || k > similarities.size()) {
    throw std::invalid_argument("vote needs at least k=" + std::to_string(k) + " neighbours");
  }
  struct Tally {
    ClassId cls;
    std::size_t count;
    double sim_sum;
  };
  // k is small (tens), so a flat list beats a map.
  std::vector<Tally> tallies;
  tallies.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    const ClassId c = ref_classes[indices[r]];
    auto it = std::find_if(tallies.begin(), tallies.end(), [c](const Tally& t) { return t.cls == c; });
    if (it == tallies.end()) {
      tallies.push_back({c, 1, similarities[r]});
    } else {
      ++it->count;
      it->sim_sum += similarities[r];
    }
  }
  const Tally* best = &tallies.front();
  for (const auto& t : tallies) {
    if (t.count > best->count || (t.count == best->count && (t.sim_sum > best->sim_sum ||
                                                              (t.sim_sum == best->sim_sum && t.cls < best->cls)))) {
      best = &t;
    }
  }
  return best->cls;
}

ClassId vote(const NeighborList& neighbors, std::size_t query, const LabelSet& ref_labels, std::size_t k) {
  if (!ref_labels.is_single_label()) throw std::invalid_argument("k-NN reference labels must be single-label");
  const auto classes = ref_labels.primary_labels();
  return vote(neighbors.indices(query), neighbors.similarities(query), classes, k);
}

PredictionSet predictions_at(const NeighborList& neighbors, const EmbeddingStore& queries,
                             std::span<const ClassId> ref_classes, std::size_t k, std::string variant) {
  if (k > neighbors.k()) throw std::invalid_argument("neighbour list too short for k=" + std::to_string(k));
  PredictionSet out;
  out.variant = std::move(variant);
  out.sample_ids = queries.sample_ids();
  out.classes.resize(neighbors.queries());
  for (std::size_t q = 0; q < neighbors.queries(); ++q) {
    out.classes[q] = vote(neighbors.indices(q), neighbors.similarities(q), ref_classes, k);
  }
  return out;
}

PredictionSet classify_knn(const EmbeddingStore& queries, const EmbeddingStore& refs, const LabelSet& ref_labels,
                           const KnnConfig& config, const SelfExclusion* exclusion) {
  if (!ref_labels.is_single_label()) throw std::invalid_argument("k-NN reference labels must be single-label");
  if (ref_labels.size() != refs.n()) throw std::invalid_argument("reference labels do not match reference rows");
  const auto neighbors = top_k(queries, refs, config, exclusion);
  const auto classes = ref_labels.primary_labels();
  return predictions_at(neighbors, queries, classes, config.k, "knn k=" + std::to_string(config.k));
}

SweepResult sweep_k(const NeighborList& neighbors, const EmbeddingStore& queries, const LabelSet& ref_labels,
                    std::span<const std::size_t> k_grid, const LabelSet* eval_labels) {
  if (k_grid.empty()) throw std::invalid_argument("k grid is empty");
  if (!ref_labels.is_single_label()) throw std::invalid_argument("k-NN reference labels must be single-label");
  if (eval_labels && eval_labels->size() != queries.n()) throw std::invalid_argument("evaluation labels do not match queries");
  const auto classes = ref_labels.primary_labels();
  SweepResult out;
  out.k_grid.assign(k_grid.begin(), k_grid.end());
  for (std::size_t k : k_grid) {
    out.predictions.push_back(predictions_at(neighbors, queries, classes, k, "knn k=" + std::to_string(k)));
    if (eval_labels) {
      const auto& p = out.predictions.back();
      std::size_t hits = 0;
      for (std::size_t i = 0; i < p.size(); ++i) hits += eval_labels->contains(i, p.classes[i]) ? 1 : 0;
      out.accuracy.push_back(p.size() == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(p.size()));
    }
  }
  return out;
}

SweepResult sweep_k(const EmbeddingStore& queries, const EmbeddingStore& refs, const LabelSet& ref_labels,
                    std::span<const std::size_t> k_grid, const LabelSet* eval_labels, const KnnConfig& config,
                    const SelfExclusion* exclusion) {
  if (k_grid.empty()) throw std::invalid_argument("k grid is empty");
  if (ref_labels.size() != refs.n()) throw std::invalid_argument("reference labels do not match reference rows");
  KnnConfig cfg = config;
  cfg.k = *std::max_element(k_grid.begin(), k_grid.end());
  const auto neighbors = top_k(queries, refs, cfg, exclusion);
  return sweep_k(neighbors, queries, ref_labels, k_grid, eval_labels);
}

std::vector<std::size_t> default_k_grid() { return {1, 3, 5, 7, 9, 11, 13, 51}; }

void save_neighbors(const NeighborDump& dump, std::size_t reference_rows, const std::filesystem::path& path) {
  const auto& nl = dump.neighbors;
  if (dump.query_ids.size() != nl.queries()) throw std::invalid_argument("neighbour dump ids do not match query count");
  std::vector<float> sims;
  sims.reserve(nl.queries() * nl.k());
  std::vector<std::vector<ClassId>> idx(nl.queries());
  for (std::size_t q = 0; q < nl.queries(); ++q) {
    auto s = nl.similarities(q);
    sims.insert(sims.end(), s.begin(), s.end());
    auto i = nl.indices(q);
    idx[q].assign(i.begin(), i.end());
  }
  EmbeddingStore store(nl.queries(), nl.k(), std::move(sims), dump.query_ids, StoreRole::neighbors);
  DatasetManifest m;
  m.num_classes = reference_rows;
  m.provenance = {{"kind", "neighbors"},
                  {"k", nl.k()},
                  {"query_sha256", dump.query_sha256},
                  {"reference_sha256", dump.reference_sha256},
                  {"self_excluded", dump.self_excluded}};
  save_store(store, LabelSet(reference_rows, idx), m, path);
}

NeighborDump load_neighbors(const std::filesystem::path& path) {
  auto bundle = load_store(path);
  if (bundle.store.role() != StoreRole::neighbors) {
    throw StoreError(StoreErrc::invalid, path.string() + " is not a neighbour dump");
  }
  NeighborDump dump;
  const std::size_t nq = bundle.store.n();
  const std::size_t k = bundle.store.d();
  dump.neighbors = NeighborList(nq, k);
  for (std::size_t q = 0; q < nq; ++q) {
    auto s = bundle.store.row(q);
    std::copy(s.begin(), s.end(), dump.neighbors.similarities(q).begin());
    auto l = bundle.labels.labels(q);
    std::copy(l.begin(), l.end(), dump.neighbors.indices(q).begin());
  }
  dump.query_ids = bundle.store.sample_ids();
  const auto& prov = bundle.manifest.provenance;
  dump.query_sha256 = prov.value("query_sha256", "");
  dump.reference_sha256 = prov.value("reference_sha256", "");
  dump.self_excluded = prov.value("self_excluded", false);
  return dump;
}

}  // namespace vlfuse
