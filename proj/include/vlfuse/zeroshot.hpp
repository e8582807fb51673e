#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vlfuse/knn.hpp"
#include "vlfuse/predictions.hpp"
#include "vlfuse/prompt_bank.hpp"
#include "vlfuse/store.hpp"

namespace vlfuse {

/// Ordered subset of a bank's templates.
struct TemplateSelection {
  std::string name;
  std::vector<std::uint32_t> template_ids;

  /// Just one template.
  static TemplateSelection single(std::uint32_t template_id);
  /// The standard templates (everything but the no-context template).
  static TemplateSelection avg(const PromptBank& bank);
  /// Every template, the no-context one included.
  static TemplateSelection avg_prime(const PromptBank& bank);
  /// "Avg", "Avg'", "all", "t<id>" or a comma separated id list.
  static TemplateSelection parse(const std::string& text, const PromptBank& bank);

  void check(const PromptBank& bank) const;
};

/// One row per class: the mean of the selected template embeddings.
///
/// The raw mean is kept for scoring, so classification is identical whether or
/// not the stored rows were renormalised.
class ClassPrototypeMatrix {
 public:
  ClassPrototypeMatrix(std::size_t classes, std::size_t dim, std::vector<float> mean_rows, bool renormalized,
                       std::vector<std::uint32_t> template_ids, std::string name_set);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t dim() const noexcept { return dim_; }
  bool renormalized() const noexcept { return renormalized_; }
  const std::vector<std::uint32_t>& template_ids() const noexcept { return template_ids_; }
  const std::string& name_set() const noexcept { return name_set_; }

  /// Rows as stored: unit length when renormalized(), the raw mean otherwise.
  std::span<const float> row(std::size_t c) const noexcept {
    return std::span<const float>(renormalized_ ? unit_ : mean_).subspan(c * dim_, dim_);
  }
  std::span<const float> mean_row(std::size_t c) const noexcept { return std::span<const float>(mean_).subspan(c * dim_, dim_); }

  /// The raw means as a text-role store (the scoring reference set).
  const EmbeddingStore& scoring_store() const noexcept { return scoring_; }

  /// Stored rows with provenance in the manifest (role=text, C rows).
  StoreBundle to_bundle() const;
  static ClassPrototypeMatrix from_bundle(const StoreBundle& bundle);

 private:
  std::size_t classes_;
  std::size_t dim_;
  std::vector<float> mean_;
  std::vector<float> unit_;
  bool renormalized_;
  std::vector<std::uint32_t> template_ids_;
  std::string name_set_;
  EmbeddingStore scoring_;
};

ClassPrototypeMatrix build_prototypes(const PromptBank& bank, const TemplateSelection& selection, bool renormalize = true);

/// Argmax cosine against the prototypes; ties go to the smaller class id.
PredictionSet classify_zeroshot(const EmbeddingStore& images, const ClassPrototypeMatrix& prototypes,
                                std::size_t threads = 0);

/// k-NN over all (or the selected) bank rows, each row labelled with its class.
PredictionSet prompt_space_knn(const EmbeddingStore& images, const PromptBank& bank, std::size_t k,
                               std::size_t threads = 0, const TemplateSelection* restrict_to = nullptr);

}  // namespace vlfuse
