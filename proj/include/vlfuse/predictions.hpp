#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "vlfuse/store.hpp"

namespace vlfuse {

/// One predicted class per sample, plus a descriptor of the classifier that produced it.
struct PredictionSet {
  std::vector<std::string> sample_ids;
  std::vector<ClassId> classes;
  std::string variant;

  std::size_t size() const noexcept { return classes.size(); }
  bool operator==(const PredictionSet&) const = default;
};

/// Throws std::invalid_argument unless ids are unique, sizes agree and every class is < num_classes.
void check_predictions(const PredictionSet& preds, std::size_t num_classes);

/// Reorders preds to follow `ids`. Throws std::invalid_argument when an id is missing
/// or the two id sets differ in size.
PredictionSet align_to(const PredictionSet& preds, const std::vector<std::string>& ids);

/// Keeps the samples whose mask entry is true.
PredictionSet select(const PredictionSet& preds, const std::vector<bool>& mask);

/// CSV with header "sample_id,prediction". Ids must not contain commas or newlines.
void save_predictions(const PredictionSet& preds, const std::filesystem::path& path);
PredictionSet load_predictions(const std::filesystem::path& path, std::string variant = {});

/// Named predictions over the same samples: one per template, per k, or per modality.
struct VariantFamily {
  std::string name;
  std::vector<PredictionSet> members;

  /// Throws std::invalid_argument when empty or when members disagree on sample ids.
  void check() const;
};

VariantFamily join(const VariantFamily& a, const VariantFamily& b);

}  // namespace vlfuse
