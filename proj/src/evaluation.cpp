#include "vlfuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "vlfuse/parallel.hpp"
#include "vlfuse/random.hpp"

namespace vlfuse {

namespace {

void require_aligned(const PredictionSet& preds, std::size_t labels) {
  if (preds.classes.size() != labels) {
    throw std::invalid_argument("prediction set '" + preds.variant + "' has " + std::to_string(preds.classes.size()) +
                                " samples, labels have " + std::to_string(labels));
  }
}

void require_single(const LabelSet& labels) {
  if (!labels.is_single_label()) throw std::invalid_argument("expected exactly one label per sample");
}

double fraction(std::size_t hits, std::size_t n) {
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

// correct[v][i]: member v predicts sample i correctly.
std::vector<std::vector<std::uint8_t>> correctness(const VariantFamily& family, const LabelSet& labels) {
  family.check();
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(family.members.size());
  for (const auto& m : family.members) {
    require_aligned(m, labels.size());
    std::vector<std::uint8_t> row(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) row[i] = labels.contains(i, m.classes[i]) ? 1 : 0;
    out.push_back(std::move(row));
  }
  return out;
}

std::size_t image_level_hits(const VariantFamily& family, const LabelSet& labels) {
  const auto correct = correctness(family, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (const auto& row : correct) {
      if (row[i]) {
        ++hits;
        break;
      }
    }
  }
  return hits;
}

}  // namespace

double top1_accuracy(const PredictionSet& preds, const LabelSet& labels) {
  require_aligned(preds, labels.size());
  require_single(labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += preds.classes[i] == labels.primary(i) ? 1 : 0;
  return fraction(hits, labels.size());
}

double real_accuracy(const PredictionSet& preds, std::span<const std::vector<ClassId>> label_sets) {
  require_aligned(preds, label_sets.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < label_sets.size(); ++i) {
    const auto& ls = label_sets[i];
    if (ls.empty()) throw std::invalid_argument("sample " + std::to_string(i) + " has no ReaL label set");
    hits += std::find(ls.begin(), ls.end(), preds.classes[i]) != ls.end() ? 1 : 0;
  }
  return fraction(hits, label_sets.size());
}

double real_accuracy(const PredictionSet& preds, const LabelSet& label_sets) {
  require_aligned(preds, label_sets.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < label_sets.size(); ++i) {
    if (label_sets.labels(i).empty()) throw std::invalid_argument("sample " + std::to_string(i) + " has no ReaL label set");
    hits += label_sets.contains(i, preds.classes[i]) ? 1 : 0;
  }
  return fraction(hits, label_sets.size());
}

PerClassAccuracy per_class_accuracy(const PredictionSet& preds, const LabelSet& labels) {
  require_aligned(preds, labels.size());
  const std::size_t classes = labels.num_classes();
  std::vector<std::size_t> hits(classes, 0);
  PerClassAccuracy out;
  out.support.assign(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ok = labels.contains(i, preds.classes[i]);
    for (ClassId c : labels.labels(i)) {
      ++out.support.at(c);
      hits[c] += ok ? 1 : 0;
    }
  }
  out.accuracy.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    out.accuracy[c] = out.support[c] == 0 ? std::numeric_limits<double>::quiet_NaN() : fraction(hits[c], out.support[c]);
  }
  return out;
}

OracleResult class_level_oracle(const VariantFamily& family, const LabelSet& labels) {
  require_single(labels);
  const auto correct = correctness(family, labels);
  const std::size_t classes = labels.num_classes();
  const std::size_t variants = family.members.size();

  // hits[c * variants + v]
  std::vector<std::size_t> hits(classes * variants, 0);
  std::vector<std::size_t> support(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ClassId c = labels.primary(i);
    ++support.at(c);
    for (std::size_t v = 0; v < variants; ++v) hits[c * variants + v] += correct[v][i];
  }

  OracleResult out;
  out.chosen.assign(classes, OracleResult::kNoVariant);
  out.per_class.support = support;
  out.per_class.accuracy.assign(classes, std::numeric_limits<double>::quiet_NaN());
  std::size_t total_hits = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (support[c] == 0) continue;
    std::size_t best = 0;
    for (std::size_t v = 1; v < variants; ++v) {
      if (hits[c * variants + v] > hits[c * variants + best]) best = v;
    }
    out.chosen[c] = best;
    out.per_class.accuracy[c] = fraction(hits[c * variants + best], support[c]);
    total_hits += hits[c * variants + best];
  }
  out.accuracy = fraction(total_hits, labels.size());

  out.predictions.variant = "class-level oracle over " + family.name;
  out.predictions.sample_ids = family.members.front().sample_ids;
  out.predictions.classes.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.predictions.classes[i] = family.members[out.chosen[labels.primary(i)]].classes[i];
  }
  return out;
}

double image_level_oracle(const VariantFamily& family, const LabelSet& labels) {
  return fraction(image_level_hits(family, labels), labels.size());
}

double double_oracle(const VariantFamily& vision, const VariantFamily& language, const LabelSet& labels,
                     OracleLevel level) {
  const auto both = join(vision, language);
  return level == OracleLevel::class_level ? class_level_oracle(both, labels).accuracy
                                           : image_level_oracle(both, labels);
}

ConfidenceInterval ci_95(std::span<const double> trial_accuracies) {
  const std::size_t n = trial_accuracies.size();
  if (n < 2) throw std::invalid_argument("a confidence interval needs at least two trials");
  double sum = 0.0;
  for (double a : trial_accuracies) sum += a;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double a : trial_accuracies) sq += (a - mean) * (a - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  const double t = boost::math::quantile(dist, 0.975);
  return ConfidenceInterval{mean, t * sd / std::sqrt(static_cast<double>(n)), n,
                            "student-t 95%, population standard deviation"};
}

AccuracyShift accuracy_shift(const PerClassAccuracy& a, const PerClassAccuracy& b, std::size_t top_n) {
  if (a.size() != b.size()) throw std::invalid_argument("per-class vectors have different lengths");
  std::vector<ClassDelta> deltas;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const auto cls = static_cast<ClassId>(c);
    if (!a.present(cls) || !b.present(cls)) continue;
    deltas.push_back({cls, a.accuracy[c] - b.accuracy[c], a.accuracy[c], b.accuracy[c]});
  }
  std::sort(deltas.begin(), deltas.end(), [](const ClassDelta& x, const ClassDelta& y) {
    return x.delta > y.delta || (x.delta == y.delta && x.cls < y.cls);
  });
  AccuracyShift out;
  const std::size_t up = std::min(top_n, deltas.size());
  out.increases.assign(deltas.begin(), deltas.begin() + static_cast<std::ptrdiff_t>(up));
  const std::size_t down = std::min(top_n, deltas.size() - up);
  for (std::size_t i = 0; i < down; ++i) out.decreases.push_back(deltas[deltas.size() - 1 - i]);
  return out;
}

std::vector<ClassDelta> best_variant_gain(const VariantFamily& family, const LabelSet& labels,
                                          std::size_t reference_member) {
  if (reference_member >= family.members.size()) throw std::invalid_argument("reference member out of range");
  const auto oracle = class_level_oracle(family, labels);
  const auto ref = per_class_accuracy(family.members[reference_member], labels);
  std::vector<ClassDelta> out;
  for (std::size_t c = 0; c < oracle.per_class.size(); ++c) {
    if (!ref.present(static_cast<ClassId>(c))) continue;
    out.push_back({static_cast<ClassId>(c), oracle.per_class.accuracy[c] - ref.accuracy[c], oracle.per_class.accuracy[c],
                   ref.accuracy[c]});
  }
  std::sort(out.begin(), out.end(), [](const ClassDelta& x, const ClassDelta& y) {
    return x.delta > y.delta || (x.delta == y.delta && x.cls < y.cls);
  });
  return out;
}

std::vector<std::size_t> default_trials(std::span<const std::size_t> m_grid, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("trial scale must be positive");
  std::vector<std::size_t> out;
  for (std::size_t m : m_grid) {
    if (m == 0) {
      out.push_back(1);
      continue;
    }
    const double base = 2500.0 / static_cast<double>(m);
    out.push_back(std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(base * scale))));
  }
  return out;
}

FewShotReport few_shot_eval(const EmbeddingStore& train, const LabelSet& train_labels, const EmbeddingStore& val,
                            const LabelSet& val_labels, const FewShotConfig& config) {
  require_single(train_labels);
  if (train_labels.size() != train.n()) throw std::invalid_argument("training labels do not match training rows");
  if (val_labels.size() != val.n()) throw std::invalid_argument("validation labels do not match validation rows");
  if (config.m_grid.empty() || config.k_grid.empty()) throw std::invalid_argument("few-shot grids must be non-empty");

  FewShotReport report;
  report.m_grid = config.m_grid;
  report.k_grid = config.k_grid;
  report.seed = config.seed;
  report.trials = config.trials.empty() ? default_trials(config.m_grid) : config.trials;
  if (report.trials.size() != config.m_grid.size()) throw std::invalid_argument("trial list must match the m grid");

  const std::size_t classes = train_labels.num_classes();
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < train_labels.size(); ++i) by_class.at(train_labels.primary(i)).push_back(i);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty()) throw std::invalid_argument("class " + std::to_string(c) + " has no training images");
  }

  const std::size_t mg = config.m_grid.size();
  const std::size_t kg = config.k_grid.size();
  report.cells.resize(mg * kg);
  struct Task {
    std::size_t m_index;
    std::size_t trial;
  };
  std::vector<Task> tasks;
  for (std::size_t mi = 0; mi < mg; ++mi) {
    const std::size_t m = config.m_grid[mi];
    if (report.trials[mi] == 0) throw std::invalid_argument("every m needs at least one trial");
    for (std::size_t ki = 0; ki < kg; ++ki) {
      auto& cell = report.cells[mi * kg + ki];
      cell.m = m;
      cell.k = config.k_grid[ki];
      cell.evaluated = m == 0 || cell.k <= m;
      if (cell.evaluated) cell.trial_accuracy.assign(report.trials[mi], 0.0);
    }
    for (std::size_t t = 0; t < report.trials[mi]; ++t) tasks.push_back({mi, t});
  }

  auto run_trial = [&](const Task& task, std::size_t inner_threads) {
    const std::size_t m = config.m_grid[task.m_index];
    std::vector<std::size_t> rows;
    std::mt19937_64 rng(derive_seed(config.seed, m, task.trial));
    for (std::size_t c = 0; c < classes; ++c) {
      const auto& pool = by_class[c];
      if (m == 0 || m >= pool.size()) {
        rows.insert(rows.end(), pool.begin(), pool.end());
        continue;
      }
      std::vector<std::size_t> draw = pool;
      for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, draw.size() - i));
        std::swap(draw[i], draw[j]);
      }
      rows.insert(rows.end(), draw.begin(), draw.begin() + static_cast<std::ptrdiff_t>(m));
    }
    std::sort(rows.begin(), rows.end());

    std::vector<std::size_t> ks;
    std::vector<std::size_t> k_slots;
    for (std::size_t ki = 0; ki < kg; ++ki) {
      if (report.cells[task.m_index * kg + ki].evaluated) {
        if (config.k_grid[ki] > rows.size()) {
          throw std::invalid_argument("k=" + std::to_string(config.k_grid[ki]) + " exceeds the " +
                                      std::to_string(rows.size()) + " sampled references for m=" + std::to_string(m));
        }
        ks.push_back(config.k_grid[ki]);
        k_slots.push_back(ki);
      }
    }
    if (ks.empty()) return;

    KnnConfig cfg;
    cfg.threads = inner_threads;
    SweepResult sweep;
    if (rows.size() == train.n()) {
      sweep = sweep_k(val, train, train_labels, ks, &val_labels, cfg);
    } else {
      std::vector<float> data;
      data.reserve(rows.size() * train.d());
      std::vector<std::string> ids;
      ids.reserve(rows.size());
      for (std::size_t r : rows) {
        auto row = train.row(r);
        data.insert(data.end(), row.begin(), row.end());
        ids.push_back(train.sample_ids()[r]);
      }
      const EmbeddingStore refs(rows.size(), train.d(), std::move(data), std::move(ids), train.role());
      sweep = sweep_k(val, refs, train_labels.select(rows), ks, &val_labels, cfg);
    }
    for (std::size_t j = 0; j < ks.size(); ++j) {
      report.cells[task.m_index * kg + k_slots[j]].trial_accuracy[task.trial] = sweep.accuracy[j];
    }
  };

  // Small reference samples: run trials side by side. Large ones: one trial at a
  // time with the neighbour search itself spread over the workers.
  const std::size_t threads = resolve_threads(config.threads);
  constexpr std::size_t kParallelTrialBytes = std::size_t{64} << 20;
  std::vector<Task> small, large;
  for (const auto& t : tasks) {
    const std::size_t m = config.m_grid[t.m_index];
    const std::size_t approx_rows = m == 0 ? train.n() : std::min(train.n(), m * classes);
    (approx_rows * train.d() * sizeof(float) <= kParallelTrialBytes ? small : large).push_back(t);
  }
  parallel_for(small.size(), threads, [&](std::size_t i) { run_trial(small[i], 1); });
  for (const auto& t : large) run_trial(t, threads);

  for (auto& cell : report.cells) {
    if (!cell.evaluated) continue;
    if (cell.trial_accuracy.size() >= 2) {
      cell.ci = ci_95(cell.trial_accuracy);
    } else {
      cell.ci = ConfidenceInterval{cell.trial_accuracy.front(), 0.0, 1, "single trial"};
    }
  }
  return report;
}

nlohmann::json to_json(const PerClassAccuracy& pc) {
  nlohmann::json acc = nlohmann::json::array();
  for (std::size_t c = 0; c < pc.size(); ++c) {
    acc.push_back(pc.present(static_cast<ClassId>(c)) ? nlohmann::json(pc.accuracy[c]) : nlohmann::json(nullptr));
  }
  return {{"accuracy", acc}, {"support", pc.support}};
}

nlohmann::json to_json(const ConfidenceInterval& ci) {
  return {{"mean", ci.mean}, {"half_width", ci.half_width}, {"trials", ci.trials}, {"method", ci.method}};
}

nlohmann::json to_json(const FewShotReport& report) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    nlohmann::json cell = {{"m", c.m}, {"k", c.k}, {"evaluated", c.evaluated}};
    if (c.evaluated) {
      cell["ci"] = to_json(c.ci);
      cell["trial_accuracy"] = c.trial_accuracy;
    }
    cells.push_back(std::move(cell));
  }
  return {{"m_grid", report.m_grid}, {"k_grid", report.k_grid}, {"trials", report.trials},
          {"seed", report.seed},     {"cells", cells}};
}

}  // namespace vlfuse
