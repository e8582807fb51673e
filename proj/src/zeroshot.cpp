#include "vlfuse/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vlfuse {

namespace {

EmbeddingStore make_scoring_store(std::size_t classes, std::size_t dim, const std::vector<float>& rows) {
  std::vector<std::string> ids;
  ids.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) ids.push_back("class" + std::to_string(c));
  return EmbeddingStore(classes, dim, rows, std::move(ids), StoreRole::text);
}

std::string describe(const std::vector<std::uint32_t>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  return os.str();
}

}  // namespace

TemplateSelection TemplateSelection::single(std::uint32_t template_id) {
  return TemplateSelection{"t" + std::to_string(template_id), {template_id}};
}

TemplateSelection TemplateSelection::avg(const PromptBank& bank) {
  TemplateSelection sel{"Avg", {}};
  for (std::uint32_t t = 0; t < bank.template_count(); ++t) {
    if (!bank.is_no_context(t)) sel.template_ids.push_back(t);
  }
  if (sel.template_ids.empty()) throw std::invalid_argument("bank has no standard templates for the Avg preset");
  return sel;
}

TemplateSelection TemplateSelection::avg_prime(const PromptBank& bank) {
  TemplateSelection sel{"Avg'", {}};
  for (std::uint32_t t = 0; t < bank.template_count(); ++t) sel.template_ids.push_back(t);
  return sel;
}

TemplateSelection TemplateSelection::parse(const std::string& text, const PromptBank& bank) {
  if (text == "Avg" || text == "avg") return avg(bank);
  if (text == "Avg'" || text == "avg'" || text == "AvgPrime" || text == "all") return avg_prime(bank);
  TemplateSelection sel;
  std::string body = text;
  if (!body.empty() && body.front() == 't') body.erase(0, 1);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument("bad template selection '" + text + "'");
    sel.template_ids.push_back(static_cast<std::uint32_t>(id));
  }
  sel.name = sel.template_ids.size() == 1 ? "t" + std::to_string(sel.template_ids[0]) : "{" + describe(sel.template_ids) + "}";
  sel.check(bank);
  return sel;
}

void TemplateSelection::check(const PromptBank& bank) const {
  if (template_ids.empty()) throw std::invalid_argument("template selection is empty");
  for (auto t : template_ids) {
    if (t >= bank.template_count()) {
      throw std::invalid_argument("template id " + std::to_string(t) + " not in bank (" +
                                  std::to_string(bank.template_count()) + " templates)");
    }
  }
}

ClassPrototypeMatrix::ClassPrototypeMatrix(std::size_t classes, std::size_t dim, std::vector<float> mean_rows,
                                           bool renormalized, std::vector<std::uint32_t> template_ids,
                                           std::string name_set)
    : classes_(classes),
      dim_(dim),
      mean_(std::move(mean_rows)),
      renormalized_(renormalized),
      template_ids_(std::move(template_ids)),
      name_set_(std::move(name_set)) {
  if (mean_.size() != classes_ * dim_) throw std::invalid_argument("prototype matrix has the wrong number of values");
  unit_.resize(mean_.size());
  for (std::size_t c = 0; c < classes_; ++c) {
    const float* m = mean_.data() + c * dim_;
    double sq = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) sq += static_cast<double>(m[j]) * m[j];
    const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
    for (std::size_t j = 0; j < dim_; ++j) unit_[c * dim_ + j] = static_cast<float>(m[j] * inv);
  }
  scoring_ = make_scoring_store(classes_, dim_, mean_);
}

StoreBundle ClassPrototypeMatrix::to_bundle() const {
  std::vector<float> rows(renormalized_ ? unit_ : mean_);
  std::vector<ClassId> ids(classes_);
  for (std::size_t c = 0; c < classes_; ++c) ids[c] = static_cast<ClassId>(c);
  DatasetManifest m;
  m.num_classes = classes_;
  m.provenance = {{"kind", "prototypes"},
                  {"renormalized", renormalized_},
                  {"template_ids", template_ids_},
                  {"name_set", name_set_}};
  EmbeddingStore store = make_scoring_store(classes_, dim_, rows);
  m.content_sha256 = content_hash(store);
  return StoreBundle{std::move(store), LabelSet::single(classes_, ids), std::move(m)};
}

ClassPrototypeMatrix ClassPrototypeMatrix::from_bundle(const StoreBundle& bundle) {
  const auto& prov = bundle.manifest.provenance;
  if (prov.value("kind", "") != "prototypes") throw std::invalid_argument("store is not a prototype matrix");
  auto data = bundle.store.data();
  return ClassPrototypeMatrix(bundle.store.n(), bundle.store.d(), std::vector<float>(data.begin(), data.end()),
                              prov.value("renormalized", false),
                              prov.value("template_ids", std::vector<std::uint32_t>{}), prov.value("name_set", ""));
}

ClassPrototypeMatrix build_prototypes(const PromptBank& bank, const TemplateSelection& selection, bool renormalize) {
  selection.check(bank);
  // Sum in a canonical order so the mean does not depend on how the selection was listed.
  std::vector<std::uint32_t> order = selection.template_ids;
  std::sort(order.begin(), order.end());
  const std::size_t classes = bank.class_count();
  const std::size_t dim = bank.dim();
  const double count = static_cast<double>(order.size());
  std::vector<float> mean(classes * dim);
  std::vector<double> acc(dim);
  for (std::size_t c = 0; c < classes; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (auto t : order) {
      auto e = bank.embedding(t, static_cast<ClassId>(c));
      for (std::size_t j = 0; j < dim; ++j) acc[j] += e[j];
    }
    for (std::size_t j = 0; j < dim; ++j) mean[c * dim + j] = static_cast<float>(acc[j] / count);
  }
  return ClassPrototypeMatrix(classes, dim, std::move(mean), renormalize, selection.template_ids, bank.name_set());
}

PredictionSet classify_zeroshot(const EmbeddingStore& images, const ClassPrototypeMatrix& prototypes,
                                std::size_t threads) {
  if (images.d() != prototypes.dim()) {
    throw std::invalid_argument("image dimension " + std::to_string(images.d()) + " differs from prototype dimension " +
                                std::to_string(prototypes.dim()));
  }
  KnnConfig cfg;
  cfg.k = 1;
  cfg.threads = threads;
  const auto nn = top_k(images, prototypes.scoring_store(), cfg);
  PredictionSet out;
  out.variant = "zeroshot templates=" + describe(prototypes.template_ids()) + " names=" + prototypes.name_set();
  out.sample_ids = images.sample_ids();
  out.classes.resize(images.n());
  for (std::size_t i = 0; i < images.n(); ++i) out.classes[i] = nn.indices(i)[0];
  return out;
}

PredictionSet prompt_space_knn(const EmbeddingStore& images, const PromptBank& bank, std::size_t k,
                               std::size_t threads, const TemplateSelection* restrict_to) {
  KnnConfig cfg;
  cfg.k = k;
  cfg.threads = threads;
  if (restrict_to == nullptr) {
    auto preds = classify_knn(images, bank.store(), bank.row_classes(), cfg);
    preds.variant = "prompt-knn k=" + std::to_string(k) + " names=" + bank.name_set();
    return preds;
  }
  restrict_to->check(bank);
  std::vector<bool> mask(bank.store().n(), false);
  for (auto t : restrict_to->template_ids) {
    for (std::size_t c = 0; c < bank.class_count(); ++c) mask[bank.row(t, static_cast<ClassId>(c))] = true;
  }
  const auto rows = subset(bank.bundle(), mask);
  auto preds = classify_knn(images, rows.store, rows.labels, cfg);
  preds.variant = "prompt-knn k=" + std::to_string(k) + " templates=" + describe(restrict_to->template_ids) +
                  " names=" + bank.name_set();
  return preds;
}

}  // namespace vlfuse
