#include "vlfuse/fusion.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

#include "vlfuse/knn.hpp"
#include "vlfuse/parallel.hpp"
#include "vlfuse/random.hpp"

namespace vlfuse {

namespace {

constexpr std::uint64_t kFoldStream = 0x666f6c64;  // "fold"

EmbeddingStore gather_rows(const EmbeddingStore& src, const std::vector<std::size_t>& rows) {
  std::vector<float> data;
  data.reserve(rows.size() * src.d());
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (std::size_t r : rows) {
    auto row = src.row(r);
    data.insert(data.end(), row.begin(), row.end());
    ids.push_back(src.sample_ids()[r]);
  }
  return EmbeddingStore(rows.size(), src.d(), std::move(data), std::move(ids), src.role());
}

}  // namespace

PrecisionTable PrecisionTable::constant(std::vector<double> precision) {
  PrecisionTable t;
  t.tp.assign(precision.size(), 0);
  t.fp.assign(precision.size(), 0);
  t.precision = std::move(precision);
  return t;
}

PrecisionTable per_class_precision(const PredictionSet& preds, const LabelSet& labels, std::size_t num_classes) {
  if (preds.classes.size() != labels.size()) {
    throw std::invalid_argument("predictions cover " + std::to_string(preds.classes.size()) + " samples, labels " +
                                std::to_string(labels.size()));
  }
  PrecisionTable t;
  t.tp.assign(num_classes, 0);
  t.fp.assign(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ClassId p = preds.classes[i];
    if (p >= num_classes) throw std::invalid_argument("predicted class " + std::to_string(p) + " out of range");
    ++(labels.contains(i, p) ? t.tp : t.fp)[p];
  }
  t.precision.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t total = t.tp[c] + t.fp[c];
    if (total > 0) t.precision[c] = static_cast<double>(t.tp[c]) / static_cast<double>(total);
  }
  return t;
}

std::vector<std::uint32_t> assign_folds(const LabelSet& labels, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least two folds");
  if (!labels.is_single_label()) throw std::invalid_argument("cross-validation needs single-label training data");
  std::vector<std::vector<std::size_t>> by_class(labels.num_classes());
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels.primary(i)).push_back(i);

  std::vector<std::uint32_t> fold(labels.size());
  std::size_t dealt = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    std::mt19937_64 rng(derive_seed(seed, kFoldStream, c));
    shuffle(std::span<std::size_t>(members), rng);
    for (std::size_t i : members) fold[i] = static_cast<std::uint32_t>(dealt++ % folds);
  }
  return fold;
}

CvResult select_k_cv(const EmbeddingStore& train, const LabelSet& labels, std::vector<std::size_t> k_grid,
                     std::size_t folds, std::uint64_t seed, std::size_t threads) {
  if (labels.size() != train.n()) throw std::invalid_argument("training labels do not match training rows");
  if (k_grid.empty()) throw std::invalid_argument("k grid is empty");
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());
  if (k_grid.front() == 0) throw std::invalid_argument("k must be positive");

  CvResult result;
  result.k_grid = k_grid;
  result.fold = assign_folds(labels, folds, seed);

  std::vector<std::vector<std::size_t>> held_out(folds);
  for (std::size_t i = 0; i < train.n(); ++i) held_out[result.fold[i]].push_back(i);
  std::size_t largest_fold = 0;
  for (const auto& f : held_out) largest_fold = std::max(largest_fold, f.size());
  const std::size_t smallest_refs = train.n() - largest_fold;
  if (k_grid.back() > smallest_refs) {
    throw std::invalid_argument("k=" + std::to_string(k_grid.back()) + " exceeds the smallest reference partition (" +
                                std::to_string(smallest_refs) + " samples)");
  }

  // per_fold[f][j]: predictions of held-out fold f at k_grid[j]
  std::vector<std::vector<std::vector<ClassId>>> per_fold(folds);
  std::vector<std::vector<double>> fold_accuracy(folds);
  const std::size_t workers = resolve_threads(threads);
  const std::size_t outer = std::min(workers, folds);
  const std::size_t inner = std::max<std::size_t>(1, workers / std::max<std::size_t>(1, outer));
  parallel_for(folds, outer, [&](std::size_t f) {
    const auto& queries = held_out[f];
    if (queries.empty()) {
      per_fold[f].assign(k_grid.size(), {});
      return;
    }
    std::vector<std::size_t> refs;
    refs.reserve(train.n() - queries.size());
    for (std::size_t i = 0; i < train.n(); ++i) {
      if (result.fold[i] != f) refs.push_back(i);
    }
    const auto query_store = gather_rows(train, queries);
    const auto ref_store = gather_rows(train, refs);
    const auto query_labels = labels.select(queries);
    KnnConfig cfg;
    cfg.threads = inner;
    const auto sweep = sweep_k(query_store, ref_store, labels.select(refs), k_grid, &query_labels, cfg);
    for (const auto& p : sweep.predictions) per_fold[f].push_back(p.classes);
    fold_accuracy[f] = sweep.accuracy;
  });

  result.mean_accuracy.assign(k_grid.size(), 0.0);
  std::size_t scored_folds = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    if (held_out[f].empty()) continue;
    ++scored_folds;
    for (std::size_t j = 0; j < k_grid.size(); ++j) result.mean_accuracy[j] += fold_accuracy[f][j];
  }
  for (auto& a : result.mean_accuracy) a /= static_cast<double>(scored_folds);

  std::size_t best = 0;
  for (std::size_t j = 1; j < k_grid.size(); ++j) {
    if (result.mean_accuracy[j] > result.mean_accuracy[best]) best = j;
  }
  result.best_k = k_grid[best];

  result.predictions.variant =
      "knn-cv k=" + std::to_string(result.best_k) + " folds=" + std::to_string(folds) + " seed=" + std::to_string(seed);
  result.predictions.sample_ids = train.sample_ids();
  result.predictions.classes.resize(train.n());
  for (std::size_t f = 0; f < folds; ++f) {
    for (std::size_t q = 0; q < held_out[f].size(); ++q) result.predictions.classes[held_out[f][q]] = per_fold[f][best][q];
  }
  return result;
}

FusionModel train_fusion(const EmbeddingStore& train_images, const LabelSet& train_labels, const PromptBank& bank,
                         const TemplateSelection& selection, std::vector<std::size_t> k_grid, std::size_t folds,
                         std::uint64_t seed, std::size_t threads) {
  if (train_images.d() != bank.dim()) {
    throw std::invalid_argument("training images have dimension " + std::to_string(train_images.d()) +
                                ", prompt bank " + std::to_string(bank.dim()));
  }
  if (train_labels.num_classes() != bank.class_count()) {
    throw std::invalid_argument("training labels have " + std::to_string(train_labels.num_classes()) +
                                " classes, prompt bank " + std::to_string(bank.class_count()));
  }
  const std::size_t classes = bank.class_count();
  const auto cv = select_k_cv(train_images, train_labels, std::move(k_grid), folds, seed, threads);
  const auto protos = build_prototypes(bank, selection);
  const auto language = classify_zeroshot(train_images, protos, threads);

  FusionModel m;
  m.precision_vision = per_class_precision(cv.predictions, train_labels, classes);
  m.precision_language = per_class_precision(language, train_labels, classes);
  m.chosen_k = cv.best_k;
  m.k_grid = cv.k_grid;
  m.cv_accuracy = cv.mean_accuracy;
  std::size_t hits = 0;
  for (std::size_t c = 0; c < classes; ++c) hits += m.precision_language.tp[c];
  m.language_train_accuracy = train_images.n() ? static_cast<double>(hits) / static_cast<double>(train_images.n()) : 0.0;
  m.folds = folds;
  m.seed = seed;
  m.template_preset = selection.name;
  m.template_ids = selection.template_ids;
  m.name_set = bank.name_set();
  m.train_sha256 = content_hash(train_images);
  m.bank_sha256 = content_hash(bank.store());
  return m;
}

PredictionSet fuse(const PredictionSet& language, const PredictionSet& vision, const FusionModel& model) {
  if (language.sample_ids != vision.sample_ids) {
    throw std::invalid_argument("language and vision predictions are not aligned on sample ids");
  }
  const std::size_t classes = model.num_classes();
  if (model.precision_vision.num_classes() != classes) throw std::invalid_argument("precision tables differ in size");
  PredictionSet out;
  out.variant = "fused k=" + std::to_string(model.chosen_k);
  out.sample_ids = language.sample_ids;
  out.classes.resize(language.size());
  for (std::size_t i = 0; i < language.size(); ++i) {
    if (language.classes[i] >= classes || vision.classes[i] >= classes) {
      throw std::invalid_argument("prediction for sample " + language.sample_ids[i] + " is out of range");
    }
    out.classes[i] = fuse_predict(language.classes[i], vision.classes[i], model);
  }
  return out;
}

nlohmann::json to_json(const PrecisionTable& table) {
  std::vector<bool> undefined(table.num_classes());
  for (std::size_t c = 0; c < table.num_classes(); ++c) undefined[c] = !table.defined(static_cast<ClassId>(c));
  return {{"tp", table.tp}, {"fp", table.fp}, {"precision", table.precision}, {"undefined", undefined}};
}

PrecisionTable precision_table_from_json(const nlohmann::json& doc) {
  PrecisionTable t;
  t.tp = doc.at("tp").get<std::vector<std::size_t>>();
  t.fp = doc.at("fp").get<std::vector<std::size_t>>();
  t.precision = doc.at("precision").get<std::vector<double>>();
  if (t.tp.size() != t.precision.size() || t.fp.size() != t.precision.size()) {
    throw std::invalid_argument("precision table arrays differ in length");
  }
  return t;
}

nlohmann::json to_json(const FusionModel& model) {
  return {{"format", "vlfuse-fusion-model"},
          {"version", 1},
          {"num_classes", model.num_classes()},
          {"chosen_k", model.chosen_k},
          {"k_grid", model.k_grid},
          {"cv_accuracy", model.cv_accuracy},
          {"language_train_accuracy", model.language_train_accuracy},
          {"precision_language", to_json(model.precision_language)},
          {"precision_vision", to_json(model.precision_vision)},
          {"provenance",
           {{"folds", model.folds},
            {"seed", model.seed},
            {"template_preset", model.template_preset},
            {"template_ids", model.template_ids},
            {"name_set", model.name_set},
            {"train_sha256", model.train_sha256},
            {"bank_sha256", model.bank_sha256},
            {"vision_precision_from", "out-of-fold k-NN predictions at chosen_k"},
            {"language_precision_from", "zero-shot predictions on the full training set"}}}};
}

FusionModel fusion_model_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "vlfuse-fusion-model") throw std::invalid_argument("not a fusion model document");
  if (doc.value("version", 0) != 1) throw std::invalid_argument("unsupported fusion model version");
  FusionModel m;
  m.precision_language = precision_table_from_json(doc.at("precision_language"));
  m.precision_vision = precision_table_from_json(doc.at("precision_vision"));
  if (m.precision_language.num_classes() != m.precision_vision.num_classes()) {
    throw std::invalid_argument("precision tables differ in size");
  }
  m.chosen_k = doc.at("chosen_k").get<std::size_t>();
  m.k_grid = doc.at("k_grid").get<std::vector<std::size_t>>();
  m.cv_accuracy = doc.at("cv_accuracy").get<std::vector<double>>();
  m.language_train_accuracy = doc.at("language_train_accuracy").get<double>();
  const auto& p = doc.at("provenance");
  m.folds = p.at("folds").get<std::size_t>();
  m.seed = p.at("seed").get<std::uint64_t>();
  m.template_preset = p.at("template_preset").get<std::string>();
  m.template_ids = p.at("template_ids").get<std::vector<std::uint32_t>>();
  m.name_set = p.at("name_set").get<std::string>();
  m.train_sha256 = p.at("train_sha256").get<std::string>();
  m.bank_sha256 = p.at("bank_sha256").get<std::string>();
  if (std::find(m.k_grid.begin(), m.k_grid.end(), m.chosen_k) == m.k_grid.end()) {
    throw std::invalid_argument("chosen_k is not in the searched grid");
  }
  return m;
}

void save_fusion_model(const FusionModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(model).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

FusionModel load_fusion_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return fusion_model_from_json(doc);
}

}  // namespace vlfuse
