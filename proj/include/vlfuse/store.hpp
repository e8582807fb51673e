#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vlfuse {

using ClassId = std::uint32_t;

enum class StoreRole : std::uint8_t { image = 0, text = 1, neighbors = 2 };

std::string_view to_string(StoreRole role);
StoreRole role_from_string(std::string_view name);

/// Dense row-major matrix of embeddings with one opaque identifier per row.
///
/// The constructor only checks that the pieces fit together; the semantic
/// invariants (unit rows, finite values, unique ids) are reported by
/// validate_store() so that broken inputs can still be represented and
/// diagnosed.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(std::size_t n, std::size_t d, std::vector<float> data,
                 std::vector<std::string> sample_ids, StoreRole role = StoreRole::image);

  std::size_t n() const noexcept { return n_; }
  std::size_t d() const noexcept { return d_; }
  StoreRole role() const noexcept { return role_; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return std::span<const float>(data_).subspan(i * d_, d_);
  }
  const std::vector<std::string>& sample_ids() const noexcept { return ids_; }

  bool operator==(const EmbeddingStore&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
  StoreRole role_ = StoreRole::image;
};

/// Per-sample sets of class ids, stored compressed (CSR layout).
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::size_t num_classes, const std::vector<std::vector<ClassId>>& per_sample);

  /// One label per sample.
  static LabelSet single(std::size_t num_classes, std::span<const ClassId> labels);

  std::size_t size() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_classes() const noexcept { return num_classes_; }

  std::span<const ClassId> labels(std::size_t i) const noexcept {
    return std::span<const ClassId>(ids_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
  }
  bool contains(std::size_t i, ClassId c) const noexcept;
  bool is_single_label() const noexcept;

  /// First label of each sample. Throws std::logic_error for a sample without labels.
  ClassId primary(std::size_t i) const;
  std::vector<ClassId> primary_labels() const;

  LabelSet select(std::span<const std::size_t> indices) const;

  bool operator==(const LabelSet&) const = default;

 private:
  std::size_t num_classes_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<ClassId> ids_;
};

/// Display names per class, keyed by name-set ("WordNet", "OpenAI", "OpenAI+").
struct ClassCatalog {
  std::map<std::string, std::vector<std::string>> names;

  const std::string& name(ClassId c, const std::string& name_set) const { return names.at(name_set).at(c); }
  bool operator==(const ClassCatalog&) const = default;
};

/// Template layout of a prompt bank: row r was produced by template row_templates[r]
/// applied to the class stored in the label block.
struct PromptLayout {
  std::string name_set;
  std::vector<std::string> templates;
  std::vector<std::uint32_t> row_templates;

  bool operator==(const PromptLayout&) const = default;
};

struct DatasetManifest {
  std::string split;
  std::string model;
  std::string backbone;
  std::size_t num_classes = 0;

  /// Empty when the store carries no Cleaner information.
  std::vector<bool> cleaner_mask;
  /// Corrected label sets, one entry per sample; empty entries outside the Cleaner mask.
  std::optional<std::vector<std::vector<ClassId>>> multi_labels;

  std::optional<ClassCatalog> classes;
  std::optional<PromptLayout> prompts;

  /// Free-form provenance (extraction settings, pinned revisions, neighbour-dump keys, ...).
  nlohmann::json provenance = nlohmann::json::object();

  /// SHA-256 of the matrix bytes, lowercase hex. Filled in by save_store.
  std::string content_sha256;

  bool has_cleaner() const noexcept { return !cleaner_mask.empty(); }
  bool operator==(const DatasetManifest&) const = default;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);

struct StoreBundle {
  EmbeddingStore store;
  LabelSet labels;
  DatasetManifest manifest;
};

enum class StoreErrc {
  io,
  bad_magic,
  version_mismatch,
  truncated,
  checksum,
  hash_mismatch,
  bad_manifest,
  invalid,
};

std::string_view to_string(StoreErrc code);

class StoreError : public std::runtime_error {
 public:
  StoreError(StoreErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  StoreErrc code() const noexcept { return code_; }

 private:
  StoreErrc code_;
};

enum class DiagnosticKind {
  shape,
  non_finite,
  norm,
  similarity_range,
  duplicate_id,
  label_count,
  label_range,
  manifest,
};

std::string_view to_string(DiagnosticKind kind);

struct Diagnostic {
  DiagnosticKind kind;
  std::optional<std::size_t> sample;
  std::string message;
};

std::string format(const Diagnostic& diag);

inline constexpr double kNormTolerance = 1e-3;
inline constexpr std::uint32_t kStoreVersion = 1;

/// Reports every violated invariant; an empty result means the inputs are usable.
std::vector<Diagnostic> validate_store(const EmbeddingStore& store, const LabelSet* labels = nullptr,
                                       const DatasetManifest* manifest = nullptr);

/// Binary container next to its manifest sidecar (see manifest_path).
std::filesystem::path manifest_path(const std::filesystem::path& store_path);

/// Writes the store and its sidecar. Refuses (StoreErrc::invalid) when validation fails.
/// The manifest's content hash is recomputed from the data being written.
void save_store(const EmbeddingStore& store, const LabelSet& labels, const DatasetManifest& manifest,
                const std::filesystem::path& path);
void save_store(const StoreBundle& bundle, const std::filesystem::path& path);

/// Parses the container and sidecar with structural checks only.
StoreBundle read_store(const std::filesystem::path& path);

/// read_store followed by validate_store; any diagnostic raises StoreErrc::invalid.
StoreBundle load_store(const std::filesystem::path& path);

/// Rows where mask is true, order preserved. The manifest's per-sample fields follow the rows.
StoreBundle subset(const StoreBundle& bundle, const std::vector<bool>& mask);

std::string content_hash(const EmbeddingStore& store);

/// Indices of the true entries of mask.
std::vector<std::size_t> mask_indices(const std::vector<bool>& mask);

}  // namespace vlfuse
