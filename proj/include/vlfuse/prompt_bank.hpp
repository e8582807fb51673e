#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlfuse/store.hpp"

namespace vlfuse {

/// Text embeddings for every (template, class) pair.
///
/// Rows live in a text-role EmbeddingStore; the label block gives each row's
/// class and the manifest's PromptLayout gives its template. The constructor
/// checks that (template, class) -> row is a bijection.
class PromptBank {
 public:
  explicit PromptBank(StoreBundle bundle);

  std::size_t template_count() const noexcept { return templates().size(); }
  std::size_t class_count() const noexcept { return bundle_.manifest.num_classes; }
  std::size_t dim() const noexcept { return bundle_.store.d(); }

  std::size_t row(std::uint32_t template_id, ClassId class_id) const { return index_.at(template_id * class_count() + class_id); }
  std::span<const float> embedding(std::uint32_t template_id, ClassId class_id) const {
    return bundle_.store.row(row(template_id, class_id));
  }

  const std::vector<std::string>& templates() const noexcept { return bundle_.manifest.prompts->templates; }
  const std::string& name_set() const noexcept { return bundle_.manifest.prompts->name_set; }
  std::uint32_t row_template(std::size_t r) const { return bundle_.manifest.prompts->row_templates.at(r); }

  /// True for the bare "{class name}" template.
  bool is_no_context(std::uint32_t template_id) const;

  const EmbeddingStore& store() const noexcept { return bundle_.store; }
  const LabelSet& row_classes() const noexcept { return bundle_.labels; }
  const StoreBundle& bundle() const noexcept { return bundle_; }

 private:
  StoreBundle bundle_;
  std::vector<std::size_t> index_;
};

/// Assembles a bank from per-template, per-class embeddings laid out template-major
/// (row = t * C + c).
PromptBank make_prompt_bank(std::vector<std::string> templates, std::string name_set, std::size_t num_classes,
                            std::size_t dim, std::vector<float> template_major_rows);

PromptBank load_prompt_bank(const std::filesystem::path& path);
void save_prompt_bank(const PromptBank& bank, const std::filesystem::path& path);

/// The seven standard templates followed by the no-context template.
std::vector<std::string> default_templates();

}  // namespace vlfuse
