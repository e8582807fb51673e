#include "vlfuse/prompt_bank.hpp"

#include <limits>

namespace vlfuse {

namespace {
constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
}

PromptBank::PromptBank(StoreBundle bundle) : bundle_(std::move(bundle)) {
  const auto& m = bundle_.manifest;
  if (bundle_.store.role() != StoreRole::text) throw std::invalid_argument("prompt bank store must have role=text");
  if (!m.prompts) throw std::invalid_argument("prompt bank manifest has no prompt layout");
  const std::size_t t_count = m.prompts->templates.size();
  const std::size_t c_count = m.num_classes;
  if (t_count == 0 || c_count == 0) throw std::invalid_argument("prompt bank needs at least one template and class");
  if (bundle_.store.n() != t_count * c_count) {
    throw std::invalid_argument("prompt bank has " + std::to_string(bundle_.store.n()) + " rows, expected " +
                                std::to_string(t_count) + "x" + std::to_string(c_count));
  }
  if (m.prompts->row_templates.size() != bundle_.store.n() || bundle_.labels.size() != bundle_.store.n()) {
    throw std::invalid_argument("prompt layout or labels do not cover every bank row");
  }
  index_.assign(t_count * c_count, kUnset);
  for (std::size_t r = 0; r < bundle_.store.n(); ++r) {
    const auto t = m.prompts->row_templates[r];
    auto ls = bundle_.labels.labels(r);
    if (t >= t_count || ls.size() != 1 || ls[0] >= c_count) {
      throw std::invalid_argument("bank row " + std::to_string(r) + " has an invalid (template, class) key");
    }
    auto& slot = index_[t * c_count + ls[0]];
    if (slot != kUnset) throw std::invalid_argument("bank row " + std::to_string(r) + " duplicates a (template, class) key");
    slot = r;
  }
}

bool PromptBank::is_no_context(std::uint32_t template_id) const {
  const auto& t = templates().at(template_id);
  return t == "{}" || t == "{class name}";
}

PromptBank make_prompt_bank(std::vector<std::string> templates, std::string name_set, std::size_t num_classes,
                            std::size_t dim, std::vector<float> template_major_rows) {
  const std::size_t t_count = templates.size();
  const std::size_t n = t_count * num_classes;
  std::vector<std::string> ids;
  std::vector<ClassId> classes;
  std::vector<std::uint32_t> row_templates;
  ids.reserve(n);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      ids.push_back("t" + std::to_string(t) + "/c" + std::to_string(c));
      classes.push_back(static_cast<ClassId>(c));
      row_templates.push_back(static_cast<std::uint32_t>(t));
    }
  }
  DatasetManifest m;
  m.num_classes = num_classes;
  m.prompts = PromptLayout{std::move(name_set), std::move(templates), std::move(row_templates)};
  EmbeddingStore store(n, dim, std::move(template_major_rows), std::move(ids), StoreRole::text);
  m.content_sha256 = content_hash(store);
  return PromptBank(StoreBundle{std::move(store), LabelSet::single(num_classes, classes), std::move(m)});
}

PromptBank load_prompt_bank(const std::filesystem::path& path) { return PromptBank(load_store(path)); }

void save_prompt_bank(const PromptBank& bank, const std::filesystem::path& path) { save_store(bank.bundle(), path); }

std::vector<std::string> default_templates() {
  return {
      "itap of a {}.",
      "a bad photo of the {}.",
      "a origami {}.",
      "a photo of the large {}.",
      "art of the {}.",
      "a {} in a video game.",
      "a photo of the small {}.",
      "{}",
  };
}

}  // namespace vlfuse
