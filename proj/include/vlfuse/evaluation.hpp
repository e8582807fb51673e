#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlfuse/knn.hpp"
#include "vlfuse/predictions.hpp"
#include "vlfuse/store.hpp"

namespace vlfuse {

// All metrics take predictions aligned with the labels (same sample order);
// use align_to() first when they come from elsewhere. Size mismatches throw
// std::invalid_argument.

double top1_accuracy(const PredictionSet& preds, const LabelSet& labels);

/// A sample is correct when its prediction is one of its labels.
double real_accuracy(const PredictionSet& preds, std::span<const std::vector<ClassId>> label_sets);
double real_accuracy(const PredictionSet& preds, const LabelSet& label_sets);

struct PerClassAccuracy {
  std::vector<double> accuracy;     // NaN for absent classes
  std::vector<std::size_t> support;  // samples whose label set contains the class

  bool present(ClassId c) const noexcept { return support[c] > 0; }
  std::size_t size() const noexcept { return accuracy.size(); }
};

PerClassAccuracy per_class_accuracy(const PredictionSet& preds, const LabelSet& labels);

struct OracleResult {
  double accuracy = 0.0;
  static constexpr std::size_t kNoVariant = std::numeric_limits<std::size_t>::max();
  /// Family member chosen for each class (kNoVariant for classes without samples).
  std::vector<std::size_t> chosen;
  /// Per-class accuracy of the chosen member.
  PerClassAccuracy per_class;
  PredictionSet predictions;
};

/// Per class, the member with the best accuracy on that class (first member on ties).
/// Labels must be single-label. This is an upper bound, not an estimate: the
/// choice is made on the very samples it is scored on.
OracleResult class_level_oracle(const VariantFamily& family, const LabelSet& labels);

/// A sample counts as correct when any member gets it right.
double image_level_oracle(const VariantFamily& family, const LabelSet& labels);

enum class OracleLevel { class_level, image_level };

/// The chosen oracle over the union of both families.
double double_oracle(const VariantFamily& vision, const VariantFamily& language, const LabelSet& labels,
                     OracleLevel level);

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
  std::size_t trials = 0;
  std::string method;
};

/// Student-t 95% interval: t(0.975, n-1) * s / sqrt(n), with s the population
/// standard deviation of the trial accuracies. Needs at least two trials.
ConfidenceInterval ci_95(std::span<const double> trial_accuracies);

struct ClassDelta {
  ClassId cls;
  double delta;
  double a;
  double b;
};

struct AccuracyShift {
  std::vector<ClassDelta> increases;  // largest a-b first
  std::vector<ClassDelta> decreases;  // most negative a-b first
};

/// The top_n largest and smallest (a - b) over classes present in both vectors.
AccuracyShift accuracy_shift(const PerClassAccuracy& a, const PerClassAccuracy& b, std::size_t top_n);

/// Per class, the gain of its best member over `reference_member`, largest first.
std::vector<ClassDelta> best_variant_gain(const VariantFamily& family, const LabelSet& labels,
                                          std::size_t reference_member);

struct FewShotConfig {
  /// Reference images per class; 0 means every training image.
  std::vector<std::size_t> m_grid{1, 5, 10, 20, 50, 100, 250, 500, 0};
  /// Trials per m (same length as m_grid); empty selects default_trials().
  std::vector<std::size_t> trials;
  std::vector<std::size_t> k_grid{1, 3, 5, 7, 9, 11, 13, 21, 51};
  std::uint64_t seed = 42;
  std::size_t threads = 0;
};

struct FewShotCell {
  std::size_t m = 0;
  std::size_t k = 0;
  bool evaluated = false;  // false where k > m
  ConfidenceInterval ci;
  std::vector<double> trial_accuracy;
};

struct FewShotReport {
  std::vector<std::size_t> m_grid;
  std::vector<std::size_t> k_grid;
  std::vector<std::size_t> trials;
  std::uint64_t seed = 0;
  std::vector<FewShotCell> cells;  // m-major

  const FewShotCell& cell(std::size_t m_index, std::size_t k_index) const {
    return cells.at(m_index * k_grid.size() + k_index);
  }
};

/// 2500/m trials for m > 0 (one trial for m = 0), multiplied by `scale` and kept at >= 2.
std::vector<std::size_t> default_trials(std::span<const std::size_t> m_grid, double scale = 1.0);

/// Repeatedly samples m training images per class, classifies the validation set
/// with k-NN against that sample and summarises the trial accuracies.
/// Trial t of grid entry m draws from a stream seeded by (seed, m, t).
FewShotReport few_shot_eval(const EmbeddingStore& train, const LabelSet& train_labels, const EmbeddingStore& val,
                            const LabelSet& val_labels, const FewShotConfig& config);

nlohmann::json to_json(const PerClassAccuracy& pc);
nlohmann::json to_json(const ConfidenceInterval& ci);
nlohmann::json to_json(const FewShotReport& report);

}  // namespace vlfuse
