#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlfuse/predictions.hpp"
#include "vlfuse/prompt_bank.hpp"
#include "vlfuse/store.hpp"
#include "vlfuse/zeroshot.hpp"

namespace vlfuse {

/// Per-class precision of one classifier. A class the classifier never
/// predicted is undefined and carries precision 0.
struct PrecisionTable {
  std::vector<std::size_t> tp;
  std::vector<std::size_t> fp;
  std::vector<double> precision;

  std::size_t num_classes() const noexcept { return precision.size(); }
  bool defined(ClassId c) const noexcept { return tp[c] + fp[c] > 0; }
  bool operator==(const PrecisionTable&) const = default;

  /// A table with the given precisions and no counts behind them (for tests and what-if runs).
  static PrecisionTable constant(std::vector<double> precision);
};

/// TP counts predictions of c on samples whose label set contains c; FP the rest of the predictions of c.
PrecisionTable per_class_precision(const PredictionSet& preds, const LabelSet& labels, std::size_t num_classes);

struct CvResult {
  std::size_t best_k = 0;
  std::vector<std::size_t> k_grid;
  /// Mean of the per-fold accuracies, one entry per k.
  std::vector<double> mean_accuracy;
  /// fold[i]: fold of training sample i.
  std::vector<std::uint32_t> fold;
  /// Out-of-fold predictions at best_k, in training order.
  PredictionSet predictions;
};

/// Stratified fold assignment: each class's samples are shuffled with a stream
/// derived from the seed, then dealt round-robin. The dealing position carries
/// over from one class to the next so fold sizes differ by at most one.
std::vector<std::uint32_t> assign_folds(const LabelSet& labels, std::size_t folds, std::uint64_t seed);

/// k chosen by cross-validated k-NN accuracy on the training set; ties go to the smaller k.
/// Throws std::invalid_argument when folds < 2, labels are not single-label, or
/// the largest k exceeds the smallest set of references any fold is scored against.
CvResult select_k_cv(const EmbeddingStore& train, const LabelSet& labels, std::vector<std::size_t> k_grid,
                     std::size_t folds, std::uint64_t seed, std::size_t threads = 0);

struct FusionModel {
  PrecisionTable precision_language;
  PrecisionTable precision_vision;
  std::size_t chosen_k = 0;
  std::vector<std::size_t> k_grid;
  std::vector<double> cv_accuracy;
  double language_train_accuracy = 0.0;
  std::size_t folds = 0;
  std::uint64_t seed = 0;
  std::string template_preset;
  std::vector<std::uint32_t> template_ids;
  std::string name_set;
  std::string train_sha256;
  std::string bank_sha256;

  std::size_t num_classes() const noexcept { return precision_language.num_classes(); }
  bool operator==(const FusionModel&) const = default;
};

/// Vision precision from out-of-fold k-NN predictions at the cross-validated k;
/// language precision from zero-shot predictions over the whole training set.
FusionModel train_fusion(const EmbeddingStore& train_images, const LabelSet& train_labels, const PromptBank& bank,
                         const TemplateSelection& selection, std::vector<std::size_t> k_grid, std::size_t folds,
                         std::uint64_t seed, std::size_t threads = 0);

/// p_L when the language precision of p_L is strictly greater than the vision
/// precision of p_V, otherwise p_V.
inline ClassId fuse_predict(ClassId p_language, ClassId p_vision, const FusionModel& model) {
  return model.precision_language.precision[p_language] > model.precision_vision.precision[p_vision] ? p_language
                                                                                                     : p_vision;
}

/// Element-wise fuse_predict over aligned prediction sets.
PredictionSet fuse(const PredictionSet& language, const PredictionSet& vision, const FusionModel& model);

nlohmann::json to_json(const PrecisionTable& table);
PrecisionTable precision_table_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const FusionModel& model);
FusionModel fusion_model_from_json(const nlohmann::json& doc);

void save_fusion_model(const FusionModel& model, const std::filesystem::path& path);
FusionModel load_fusion_model(const std::filesystem::path& path);

}  // namespace vlfuse
