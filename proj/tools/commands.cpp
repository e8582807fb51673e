#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "render.hpp"
#include "vlfuse/evaluation.hpp"
#include "vlfuse/fusion.hpp"
#include "vlfuse/knn.hpp"
#include "vlfuse/parallel.hpp"
#include "vlfuse/predictions.hpp"
#include "vlfuse/prompt_bank.hpp"
#include "vlfuse/store.hpp"
#include "vlfuse/zeroshot.hpp"

namespace vlfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  const RunConfig& cfg;
  std::ostream& out;
  std::ostream& err;
  std::size_t threads;
  std::uint64_t seed;
};

struct Input {
  std::string given;
  StoreBundle bundle;
};

Input load_input(const RunConfig& cfg, const std::string& key) {
  const auto given = cfg.require<std::string>(key);
  return Input{given, load_store(cfg.resolve(given))};
}

PromptBank load_bank(const RunConfig& cfg, const std::string& given) {
  auto bundle = load_store(cfg.resolve(given));
  try {
    return PromptBank(std::move(bundle));
  } catch (const std::invalid_argument& e) {
    throw ValidationFailure(given + ": " + e.what());
  }
}

json describe(const std::string& given, const StoreBundle& b) {
  return {{"file", given},
          {"sha256", b.manifest.content_sha256},
          {"role", std::string(to_string(b.store.role()))},
          {"n", b.store.n()},
          {"d", b.store.d()}};
}

json describe(const std::string& given, const PromptBank& bank) {
  auto j = describe(given, bank.bundle());
  j["name_set"] = bank.name_set();
  j["templates"] = bank.template_count();
  return j;
}

fs::path output_dir(const RunConfig& cfg) {
  const auto dir = cfg.resolve(cfg.get<std::string>("output", "vlfuse-out"));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_report(const RunConfig& cfg, const std::string& name, const json& report) {
  const auto dir = output_dir(cfg);
  write_text(dir / (name + ".json"), report.dump(2) + "\n");
  write_text(dir / (name + ".md"), render_markdown(report));
}

std::vector<std::size_t> k_grid(const RunConfig& cfg) {
  auto grid = cfg.get<std::vector<std::size_t>>("k_grid", default_k_grid());
  if (grid.empty()) throw ConfigError("k_grid is empty");
  return grid;
}

/// The name set used for readable class names, when the store carries a catalog.
const std::vector<std::string>* class_names(const StoreBundle& b, const std::string& preferred) {
  if (!b.manifest.classes) return nullptr;
  const auto& names = b.manifest.classes->names;
  if (auto it = names.find(preferred); it != names.end()) return &it->second;
  return names.empty() ? nullptr : &names.begin()->second;
}

/// Top-1 on the evaluation labels plus, when the store has Cleaner data, top-1
/// and ReaL accuracy on the Cleaner subset.
json accuracy_block(const PredictionSet& preds, const StoreBundle& eval) {
  json acc = {{"top1", top1_accuracy(preds, eval.labels)}};
  const auto& m = eval.manifest;
  if (m.has_cleaner() && m.multi_labels) {
    const auto keep = mask_indices(m.cleaner_mask);
    const auto sub = select(preds, m.cleaner_mask);
    std::vector<std::vector<ClassId>> sets;
    sets.reserve(keep.size());
    for (auto i : keep) sets.push_back((*m.multi_labels)[i]);
    acc["cleaner_samples"] = keep.size();
    acc["cleaner_top1"] = top1_accuracy(sub, eval.labels.select(keep));
    acc["real"] = real_accuracy(sub, LabelSet(m.num_classes, sets));
  }
  return acc;
}

std::string per_class_csv(const PredictionSet& preds, const StoreBundle& eval, const std::string& name_set) {
  const auto pc = per_class_accuracy(preds, eval.labels);
  const auto* names = class_names(eval, name_set);
  std::string csv = csv_row({"class", "name", "support", "accuracy"});
  for (std::size_t c = 0; c < pc.size(); ++c) {
    const bool present = pc.present(static_cast<ClassId>(c));
    csv += csv_row({std::to_string(c), names ? names->at(c) : "", std::to_string(pc.support[c]),
                    present ? number(pc.accuracy[c]) : ""});
  }
  return csv;
}

void check_floor(const Context& ctx, double value, const std::string& what) {
  if (!ctx.cfg.has("expect_min_accuracy")) return;
  const auto floor = ctx.cfg.require<double>("expect_min_accuracy");
  if (value < floor) {
    throw ValidationFailure(what + " " + percent(value) + "% is below expect_min_accuracy " + percent(floor) + "%");
  }
}

NeighborList first_columns(const NeighborList& nl, std::size_t k) {
  NeighborList out(nl.queries(), k);
  for (std::size_t q = 0; q < nl.queries(); ++q) {
    std::copy_n(nl.indices(q).begin(), k, out.indices(q).begin());
    std::copy_n(nl.similarities(q).begin(), k, out.similarities(q).begin());
  }
  return out;
}

/// top_k, optionally served from / written to the neighbors_cache file.
NeighborList neighbors_for(const Context& ctx, const StoreBundle& queries, const StoreBundle& refs, std::size_t k,
                           bool self_exclude) {
  const auto cache = ctx.cfg.optional_path("neighbors_cache");
  if (cache && fs::exists(*cache)) {
    auto dump = load_neighbors(*cache);
    if (dump.query_sha256 == queries.manifest.content_sha256 && dump.reference_sha256 == refs.manifest.content_sha256 &&
        dump.self_excluded == self_exclude && dump.neighbors.k() >= k && dump.query_ids == queries.store.sample_ids()) {
      ctx.err << "using cached neighbours from " << cache->string() << "\n";
      return dump.neighbors.k() == k ? dump.neighbors : first_columns(dump.neighbors, k);
    }
    ctx.err << "neighbour cache " << cache->string() << " does not match these inputs; recomputing\n";
  }
  KnnConfig kc;
  kc.k = k;
  kc.threads = ctx.threads;
  std::optional<SelfExclusion> excl;
  if (self_exclude) excl = exclude_self(queries.store, refs.store);
  auto nl = top_k(queries.store, refs.store, kc, excl ? &*excl : nullptr);
  if (cache) {
    NeighborDump dump{nl, queries.store.sample_ids(), queries.manifest.content_sha256, refs.manifest.content_sha256,
                      self_exclude};
    save_neighbors(dump, refs.store.n(), *cache);
  }
  return nl;
}

std::size_t best_index(const std::vector<std::size_t>& ks, const std::vector<double>& acc) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (acc[i] > acc[best] || (acc[i] == acc[best] && ks[i] < ks[best])) best = i;
  }
  return best;
}

int cmd_eval(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto variant = cfg.require<std::string>("variant");
  const auto eval = load_input(cfg, "eval");
  json inputs = {{"eval", describe(eval.given, eval.bundle)}};
  json params = json::object();
  PredictionSet preds;
  std::string name_set;

  if (variant == "knn") {
    const auto train = load_input(cfg, "train");
    inputs["train"] = describe(train.given, train.bundle);
    const auto k = cfg.require<std::size_t>("k");
    const bool self_exclude = cfg.get<bool>("exclude_self", false);
    const auto nl = neighbors_for(ctx, eval.bundle, train.bundle, k, self_exclude);
    if (!train.bundle.labels.is_single_label()) throw ConfigError("k-NN reference labels must be single-label");
    preds = predictions_at(nl, eval.bundle.store, train.bundle.labels.primary_labels(), k, "knn k=" + std::to_string(k));
    params = {{"k", k}, {"exclude_self", self_exclude}};
  } else if (variant == "zeroshot" || variant == "prompt-knn") {
    const auto bank_file = cfg.require<std::string>("bank");
    const auto bank = load_bank(cfg, bank_file);
    inputs["bank"] = describe(bank_file, bank);
    name_set = bank.name_set();
    if (variant == "zeroshot") {
      const auto sel = TemplateSelection::parse(cfg.get<std::string>("templates", "Avg"), bank);
      const bool renormalize = cfg.get<bool>("renormalize", true);
      preds = classify_zeroshot(eval.bundle.store, build_prototypes(bank, sel, renormalize), ctx.threads);
      params = {{"templates", sel.name}, {"template_ids", sel.template_ids}, {"renormalize", renormalize}};
    } else {
      const auto k = cfg.require<std::size_t>("k");
      params = {{"k", k}};
      if (cfg.has("templates")) {
        const auto sel = TemplateSelection::parse(cfg.require<std::string>("templates"), bank);
        preds = prompt_space_knn(eval.bundle.store, bank, k, ctx.threads, &sel);
        params["templates"] = sel.name;
        params["template_ids"] = sel.template_ids;
      } else {
        preds = prompt_space_knn(eval.bundle.store, bank, k, ctx.threads);
      }
    }
    params["name_set"] = name_set;
  } else if (variant == "import") {
    const auto given = cfg.require<std::string>("predictions");
    const auto loaded = load_predictions(cfg.resolve(given));
    preds = align_to(loaded, eval.bundle.store.sample_ids());
    check_predictions(preds, eval.bundle.manifest.num_classes);
    inputs["predictions"] = {{"file", given}, {"rows", loaded.size()}};
  } else {
    throw ConfigError("unknown variant '" + variant + "' (expected zeroshot, knn, prompt-knn or import)");
  }

  const auto acc = accuracy_block(preds, eval.bundle);
  json report = {{"command", "eval"},
                 {"variant", preds.variant},
                 {"parameters", params},
                 {"inputs", inputs},
                 {"samples", preds.size()},
                 {"accuracy", acc},
                 {"files", {{"predictions", "eval_predictions.csv"}, {"per_class", "eval_per_class.csv"}}}};
  const auto dir = output_dir(cfg);
  save_predictions(preds, dir / "eval_predictions.csv");
  write_text(dir / "eval_per_class.csv", per_class_csv(preds, eval.bundle, name_set));
  write_report(cfg, "eval", report);
  ctx.out << "eval " << preds.variant << ": top-1 " << percent(acc.at("top1").get<double>()) << "%";
  if (acc.contains("real")) ctx.out << ", ReaL " << percent(acc.at("real").get<double>()) << "%";
  ctx.out << "\n";
  check_floor(ctx, acc.at("top1").get<double>(), "top-1");
  return kExitOk;
}

int cmd_sweep(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto eval = load_input(cfg, "eval");
  const auto train = load_input(cfg, "train");
  const auto grid = k_grid(cfg);
  const bool self_exclude = cfg.get<bool>("exclude_self", false);
  const auto nl = neighbors_for(ctx, eval.bundle, train.bundle, *std::max_element(grid.begin(), grid.end()), self_exclude);
  const auto sweep = sweep_k(nl, eval.bundle.store, train.bundle.labels, grid, &eval.bundle.labels);
  const auto best = best_index(grid, sweep.accuracy);

  json per_k = json::array();
  std::vector<PerClassAccuracy> per_class;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    per_k.push_back({{"k", grid[i]}, {"accuracy", accuracy_block(sweep.predictions[i], eval.bundle)}});
    per_class.push_back(per_class_accuracy(sweep.predictions[i], eval.bundle.labels));
  }

  std::string curve = csv_row({"k", "accuracy"});
  for (std::size_t i = 0; i < grid.size(); ++i) curve += csv_row({std::to_string(grid[i]), number(sweep.accuracy[i])});

  std::vector<std::string> header = {"class", "support", "best_k", "best_accuracy"};
  for (auto k : grid) header.push_back("k" + std::to_string(k));
  std::string by_class = csv_row(header);
  const std::size_t classes = eval.bundle.labels.num_classes();
  for (std::size_t c = 0; c < classes; ++c) {
    if (!per_class.front().present(static_cast<ClassId>(c))) continue;
    std::vector<double> acc(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) acc[i] = per_class[i].accuracy[c];
    const auto b = best_index(grid, acc);
    std::vector<std::string> row = {std::to_string(c), std::to_string(per_class.front().support[c]),
                                    std::to_string(grid[b]), number(acc[b])};
    for (double a : acc) row.push_back(number(a));
    by_class += csv_row(row);
  }

  json report = {{"command", "sweep"},
                 {"inputs", {{"eval", describe(eval.given, eval.bundle)}, {"train", describe(train.given, train.bundle)}}},
                 {"parameters", {{"exclude_self", self_exclude}}},
                 {"k_grid", grid},
                 {"accuracy", sweep.accuracy},
                 {"per_k", per_k},
                 {"best_k", grid[best]},
                 {"files", {{"curve", "sweep.csv"}, {"best_k_per_class", "sweep_best_k_per_class.csv"}}}};
  const auto dir = output_dir(cfg);
  write_text(dir / "sweep.csv", curve);
  write_text(dir / "sweep_best_k_per_class.csv", by_class);
  write_report(cfg, "sweep", report);
  ctx.out << "sweep: best k=" << grid[best] << " top-1 " << percent(sweep.accuracy[best]) << "%\n";
  check_floor(ctx, sweep.accuracy[best], "best top-1");
  return kExitOk;
}

int cmd_fewshot(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto eval = load_input(cfg, "eval");
  const auto train = load_input(cfg, "train");
  FewShotConfig fc;
  fc.m_grid = cfg.get<std::vector<std::size_t>>("m_grid", fc.m_grid);
  fc.k_grid = cfg.get<std::vector<std::size_t>>("k_grid", fc.k_grid);
  fc.trials = cfg.has("trials") ? cfg.require<std::vector<std::size_t>>("trials")
                                : default_trials(fc.m_grid, cfg.get<double>("trial_scale", 1.0));
  fc.seed = ctx.seed;
  fc.threads = ctx.threads;
  const auto result = few_shot_eval(train.bundle.store, train.bundle.labels, eval.bundle.store, eval.bundle.labels, fc);

  std::string csv = csv_row({"m", "k", "trials", "mean", "half_width"});
  for (const auto& c : result.cells) {
    if (!c.evaluated) continue;
    csv += csv_row({std::to_string(c.m), std::to_string(c.k), std::to_string(c.ci.trials), number(c.ci.mean),
                    number(c.ci.half_width)});
  }
  json report = {{"command", "fewshot"},
                 {"inputs", {{"eval", describe(eval.given, eval.bundle)}, {"train", describe(train.given, train.bundle)}}},
                 {"seed", ctx.seed},
                 {"result", to_json(result)},
                 {"files", {{"table", "fewshot.csv"}}}};
  write_text(output_dir(cfg) / "fewshot.csv", csv);
  write_report(cfg, "fewshot", report);
  ctx.out << "fewshot: " << result.cells.size() << " cells over " << result.m_grid.size() << " values of m\n";
  return kExitOk;
}

int cmd_fuse(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto eval = load_input(cfg, "eval");
  const auto train = load_input(cfg, "train");
  const auto bank_file = cfg.require<std::string>("bank");
  const auto bank = load_bank(cfg, bank_file);
  const auto sel = TemplateSelection::parse(cfg.get<std::string>("templates", "Avg'"), bank);
  const auto grid = k_grid(cfg);
  const auto folds = cfg.get<std::size_t>("folds", 10);

  const auto model =
      train_fusion(train.bundle.store, train.bundle.labels, bank, sel, grid, folds, ctx.seed, ctx.threads);
  const auto language = classify_zeroshot(eval.bundle.store, build_prototypes(bank, sel), ctx.threads);
  KnnConfig kc;
  kc.threads = ctx.threads;
  const auto sweep = sweep_k(eval.bundle.store, train.bundle.store, train.bundle.labels, model.k_grid,
                             &eval.bundle.labels, kc);
  const std::size_t cv_index = static_cast<std::size_t>(
      std::find(model.k_grid.begin(), model.k_grid.end(), model.chosen_k) - model.k_grid.begin());
  const auto val_index = best_index(model.k_grid, sweep.accuracy);
  const auto& vision = sweep.predictions[cv_index];
  const auto fused = fuse(language, vision, model);

  json acc = {{"language", accuracy_block(language, eval.bundle)},
              {"vision", accuracy_block(vision, eval.bundle)},
              {"vision_validation_k", accuracy_block(sweep.predictions[val_index], eval.bundle)},
              {"fused", accuracy_block(fused, eval.bundle)}};

  const auto dir = output_dir(cfg);
  save_fusion_model(model, dir / "fusion_model.json");

  std::string preds_csv = csv_row({"sample_id", "language", "vision", "fused"});
  for (std::size_t i = 0; i < fused.size(); ++i) {
    preds_csv += csv_row({fused.sample_ids[i], std::to_string(language.classes[i]), std::to_string(vision.classes[i]),
                          std::to_string(fused.classes[i])});
  }
  std::string prec_csv = csv_row({"class", "language_tp", "language_fp", "language_precision", "language_undefined",
                                  "vision_tp", "vision_fp", "vision_precision", "vision_undefined"});
  for (std::size_t c = 0; c < model.num_classes(); ++c) {
    const auto cls = static_cast<ClassId>(c);
    const auto& l = model.precision_language;
    const auto& v = model.precision_vision;
    prec_csv += csv_row({std::to_string(c), std::to_string(l.tp[c]), std::to_string(l.fp[c]), number(l.precision[c]),
                         l.defined(cls) ? "0" : "1", std::to_string(v.tp[c]), std::to_string(v.fp[c]),
                         number(v.precision[c]), v.defined(cls) ? "0" : "1"});
  }
  write_text(dir / "fuse_predictions.csv", preds_csv);
  write_text(dir / "fuse_precision.csv", prec_csv);

  json report = {{"command", "fuse"},
                 {"inputs",
                  {{"eval", describe(eval.given, eval.bundle)},
                   {"train", describe(train.given, train.bundle)},
                   {"bank", describe(bank_file, bank)}}},
                 {"templates", sel.name},
                 {"template_ids", sel.template_ids},
                 {"name_set", bank.name_set()},
                 {"folds", folds},
                 {"seed", ctx.seed},
                 {"k_grid", model.k_grid},
                 {"cv_accuracy", model.cv_accuracy},
                 {"chosen_k", model.chosen_k},
                 {"validation_accuracy_by_k", sweep.accuracy},
                 {"validation_best_k", model.k_grid[val_index]},
                 {"accuracy", acc},
                 {"files",
                  {{"model", "fusion_model.json"},
                   {"predictions", "fuse_predictions.csv"},
                   {"precision", "fuse_precision.csv"}}}};
  write_report(cfg, "fuse", report);
  ctx.out << "fuse: language " << percent(acc["language"]["top1"].get<double>()) << "%, vision (k=" << model.chosen_k
          << ") " << percent(acc["vision"]["top1"].get<double>()) << "%, fused "
          << percent(acc["fused"]["top1"].get<double>()) << "%\n";
  check_floor(ctx, acc["fused"]["top1"].get<double>(), "fused top-1");
  return kExitOk;
}

struct FamilyReport {
  VariantFamily family;
  std::size_t reference = 0;
  json doc;
};

FamilyReport summarise(VariantFamily family, const LabelSet& labels, std::optional<std::size_t> reference) {
  FamilyReport fr;
  json members = json::array();
  std::size_t best = 0;
  std::vector<double> acc;
  for (std::size_t i = 0; i < family.members.size(); ++i) {
    acc.push_back(top1_accuracy(family.members[i], labels));
    if (acc[i] > acc[best]) best = i;
    members.push_back({{"variant", family.members[i].variant}, {"top1", acc[i]}});
  }
  fr.reference = reference.value_or(best);
  const auto oracle = class_level_oracle(family, labels);
  fr.doc = {{"name", family.name},
            {"members", members},
            {"best_member", family.members[best].variant},
            {"best_member_accuracy", acc[best]},
            {"reference_member", family.members[fr.reference].variant},
            {"class_level", oracle.accuracy},
            {"image_level", image_level_oracle(family, labels)}};
  fr.family = std::move(family);
  return fr;
}

int cmd_oracle(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto eval = load_input(cfg, "eval");
  const auto& labels = eval.bundle.labels;
  json inputs = {{"eval", describe(eval.given, eval.bundle)}};
  std::vector<FamilyReport> families;
  std::optional<std::size_t> vision_at, language_at;

  if (cfg.has("train")) {
    const auto train = load_input(cfg, "train");
    inputs["train"] = describe(train.given, train.bundle);
    const auto grid = k_grid(cfg);
    KnnConfig kc;
    kc.threads = ctx.threads;
    auto sweep = sweep_k(eval.bundle.store, train.bundle.store, train.bundle.labels, grid, nullptr, kc);
    VariantFamily fam{"vision", std::move(sweep.predictions)};
    std::optional<std::size_t> ref;
    if (cfg.has("vision_reference_k")) {
      const auto k = cfg.require<std::size_t>("vision_reference_k");
      const auto it = std::find(grid.begin(), grid.end(), k);
      if (it == grid.end()) throw ConfigError("vision_reference_k is not in k_grid");
      ref = static_cast<std::size_t>(it - grid.begin());
    }
    vision_at = families.size();
    families.push_back(summarise(std::move(fam), labels, ref));
  }

  if (cfg.has("bank")) {
    std::vector<std::string> banks;
    if (cfg.at("bank").is_array()) {
      banks = cfg.require<std::vector<std::string>>("bank");
    } else {
      banks.push_back(cfg.require<std::string>("bank"));
    }
    VariantFamily fam{"language", {}};
    json bank_inputs = json::array();
    for (const auto& given : banks) {
      const auto bank = load_bank(cfg, given);
      bank_inputs.push_back(describe(given, bank));
      for (std::uint32_t t = 0; t < bank.template_count(); ++t) {
        const auto protos = build_prototypes(bank, TemplateSelection::single(t));
        fam.members.push_back(classify_zeroshot(eval.bundle.store, protos, ctx.threads));
      }
    }
    inputs["bank"] = bank_inputs;
    std::optional<std::size_t> ref;
    if (cfg.has("language_reference_member")) ref = cfg.require<std::size_t>("language_reference_member");
    if (ref && *ref >= fam.members.size()) throw ConfigError("language_reference_member out of range");
    language_at = families.size();
    families.push_back(summarise(std::move(fam), labels, ref));
  }

  if (cfg.has("imports")) {
    VariantFamily fam{"imported", {}};
    json files = json::array();
    for (const auto& given : cfg.require<std::vector<std::string>>("imports")) {
      auto p = align_to(load_predictions(cfg.resolve(given)), eval.bundle.store.sample_ids());
      check_predictions(p, eval.bundle.manifest.num_classes);
      fam.members.push_back(std::move(p));
      files.push_back(given);
    }
    inputs["imports"] = files;
    families.push_back(summarise(std::move(fam), labels, std::nullopt));
  }
  if (families.empty()) throw ConfigError("oracle needs at least one of train (vision), bank (language) or imports");

  json report = {{"command", "oracle"}, {"inputs", inputs}, {"families", json::array()}};
  for (const auto& f : families) report["families"].push_back(f.doc);

  const auto dir = output_dir(cfg);
  const std::size_t classes = labels.num_classes();
  std::vector<std::string> header = {"class", "support"};
  std::vector<PerClassAccuracy> ref_pc, oracle_pc;
  for (const auto& f : families) {
    header.push_back(f.family.name + "_reference");
    header.push_back(f.family.name + "_best_variant");
    ref_pc.push_back(per_class_accuracy(f.family.members[f.reference], labels));
    oracle_pc.push_back(class_level_oracle(f.family, labels).per_class);
  }
  std::string gains = csv_row(header);
  for (std::size_t c = 0; c < classes; ++c) {
    if (!ref_pc.front().present(static_cast<ClassId>(c))) continue;
    std::vector<std::string> row = {std::to_string(c), std::to_string(ref_pc.front().support[c])};
    for (std::size_t f = 0; f < families.size(); ++f) {
      row.push_back(number(ref_pc[f].accuracy[c]));
      row.push_back(number(oracle_pc[f].accuracy[c]));
    }
    gains += csv_row(row);
  }
  write_text(dir / "oracle_per_class.csv", gains);
  report["files"] = {{"per_class", "oracle_per_class.csv"}};

  if (vision_at && language_at) {
    const auto& v = families[*vision_at];
    const auto& l = families[*language_at];
    report["double"] = {{"class_level", double_oracle(v.family, l.family, labels, OracleLevel::class_level)},
                        {"image_level", double_oracle(v.family, l.family, labels, OracleLevel::image_level)}};
    const auto vpc = per_class_accuracy(v.family.members[v.reference], labels);
    const auto lpc = per_class_accuracy(l.family.members[l.reference], labels);
    const auto shift = accuracy_shift(vpc, lpc, cfg.get<std::size_t>("top_n", 10));
    auto deltas = [](const std::vector<ClassDelta>& ds) {
      json arr = json::array();
      for (const auto& d : ds) arr.push_back({{"class", d.cls}, {"delta", d.delta}, {"vision", d.a}, {"language", d.b}});
      return arr;
    };
    report["vision_minus_language"] = {{"largest", deltas(shift.increases)}, {"smallest", deltas(shift.decreases)}};
    std::string csv = csv_row({"class", "support", "vision", "language", "delta"});
    for (std::size_t c = 0; c < classes; ++c) {
      if (!vpc.present(static_cast<ClassId>(c))) continue;
      csv += csv_row({std::to_string(c), std::to_string(vpc.support[c]), number(vpc.accuracy[c]),
                      number(lpc.accuracy[c]), number(vpc.accuracy[c] - lpc.accuracy[c])});
    }
    write_text(dir / "oracle_vision_vs_language.csv", csv);
    report["files"]["vision_vs_language"] = "oracle_vision_vs_language.csv";
  }
  write_report(cfg, "oracle", report);
  for (const auto& f : families) {
    ctx.out << "oracle " << f.family.name << ": class-level " << percent(f.doc["class_level"].get<double>())
            << "%, image-level " << percent(f.doc["image_level"].get<double>()) << "%\n";
  }
  return kExitOk;
}

int cmd_validate(const Context& ctx, const std::vector<std::string>& files) {
  const auto& cfg = ctx.cfg;
  std::vector<std::string> paths = files;
  if (cfg.has("stores")) {
    for (auto& s : cfg.require<std::vector<std::string>>("stores")) paths.push_back(s);
  }
  if (paths.empty()) {
    for (const char* key : {"train", "eval"}) {
      if (cfg.has(key)) paths.push_back(cfg.require<std::string>(key));
    }
    if (cfg.has("bank")) {
      if (cfg.at("bank").is_array()) {
        for (auto& s : cfg.require<std::vector<std::string>>("bank")) paths.push_back(s);
      } else {
        paths.push_back(cfg.require<std::string>("bank"));
      }
    }
  }
  if (paths.empty()) throw ConfigError("nothing to validate: give store paths or a config with stores/train/eval/bank");

  json stores = json::array();
  std::size_t total = 0;
  for (const auto& given : paths) {
    const auto path = cfg.resolve(given);
    json diags = json::array();
    try {
      auto bundle = read_store(path);
      for (const auto& d : validate_store(bundle.store, &bundle.labels, &bundle.manifest)) {
        diags.push_back({{"kind", std::string(to_string(d.kind))}, {"message", format(d)}});
      }
      if (diags.empty() && bundle.store.role() == StoreRole::text && bundle.manifest.prompts) {
        try {
          PromptBank bank(std::move(bundle));
        } catch (const std::invalid_argument& e) {
          diags.push_back({{"kind", "manifest"}, {"message", e.what()}});
        }
      }
    } catch (const StoreError& e) {
      if (e.code() == StoreErrc::io) throw;
      diags.push_back({{"kind", std::string(to_string(e.code()))}, {"message", e.what()}});
    }
    for (const auto& d : diags) ctx.out << given << ": " << d["message"].get<std::string>() << "\n";
    if (diags.empty()) ctx.out << given << ": ok\n";
    total += diags.size();
    stores.push_back({{"file", given}, {"diagnostics", diags}});
  }
  if (cfg.has("output")) write_report(cfg, "validate", {{"command", "validate"}, {"stores", stores}});
  return total == 0 ? kExitOk : kExitFailure;
}

int cmd_report(const Context& ctx, const std::vector<std::string>& files) {
  const auto& cfg = ctx.cfg;
  std::vector<std::string> paths = files;
  if (cfg.has("reports")) {
    for (auto& s : cfg.require<std::vector<std::string>>("reports")) paths.push_back(s);
  }
  if (paths.empty()) throw ConfigError("report needs report documents (positional or 'reports')");
  std::string md = "# vlfuse report\n";
  for (const auto& given : paths) {
    std::ifstream in(cfg.resolve(given), std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + given);
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError(given + ": " + e.what());
    }
    md += "\n" + render_markdown(doc);
  }
  if (cfg.has("output")) write_text(output_dir(cfg) / "report.md", md);
  ctx.out << md;
  return kExitOk;
}

}  // namespace

int run_command(const std::string& command, const RunConfig& config, const std::vector<std::string>& files,
                std::ostream& out, std::ostream& err) {
  try {
    const auto threads = resolve_threads(config.get<std::size_t>("threads", 0));
    const Context ctx{config, out, err, threads, config.get<std::uint64_t>("seed", 42)};
    if (command == "validate") return cmd_validate(ctx, files);
    if (command == "report") return cmd_report(ctx, files);
    if (command == "eval") return cmd_eval(ctx);
    if (command == "fuse") return cmd_fuse(ctx);
    if (command == "oracle") return cmd_oracle(ctx);
    if (command == "fewshot") return cmd_fewshot(ctx);
    if (command == "sweep") return cmd_sweep(ctx);
    throw ConfigError("unknown command '" + command + "'");
  } catch (const ValidationFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const StoreError& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == StoreErrc::io ? kExitConfig : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learning-free classification and evaluation over precomputed vision-language embeddings."};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, k, folds;
  std::optional<std::string> output, variant, templates;
  std::vector<std::string> files;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"validate", "Check stores, labels and manifests"},
      {"eval", "Classify an evaluation set (zeroshot, knn, prompt-knn or import) and report accuracy"},
      {"fuse", "Train the precision-based fusion and evaluate language, vision and fused predictions"},
      {"oracle", "Class-level, image-level and double oracles over variant families"},
      {"fewshot", "Few-shot k-NN with repeated sampling and 95% intervals"},
      {"sweep", "k-NN accuracy over a grid of k"},
      {"report", "Render report documents as markdown tables"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config,-c", config_file, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set,-s", sets, "Override a config key: key=value (value parsed as JSON when possible)");
    sub->add_option("--seed", seed, "Random seed (default 42)");
    sub->add_option("--threads,-j", threads, "Worker threads (default: VLFUSE_THREADS, then hardware)");
    sub->add_option("--output,-o", output, "Output directory");
    if (name == "eval") {
      sub->add_option("--variant", variant, "zeroshot | knn | prompt-knn | import");
      sub->add_option("--k", k, "Neighbours for knn / prompt-knn");
      sub->add_option("--templates", templates, "Template preset: Avg, Avg', t<id> or an id list");
    }
    if (name == "fuse") {
      sub->add_option("--templates", templates, "Template preset for the language classifier (default Avg')");
      sub->add_option("--folds", folds, "Cross-validation folds (default 10)");
    }
    if (name == "validate" || name == "report") sub->add_option("files", files, "Files to process");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = config_file.empty() ? RunConfig() : RunConfig::from_file(config_file);
    for (const auto& s : sets) cfg.assign(s);
    if (seed) cfg.set("seed", *seed);
    if (threads) cfg.set("threads", *threads);
    if (output) cfg.set("output", fs::absolute(*output).string());
    if (variant) cfg.set("variant", *variant);
    if (k) cfg.set("k", *k);
    if (templates) cfg.set("templates", *templates);
    if (folds) cfg.set("folds", *folds);
    // Positional paths are relative to the working directory, not the config file.
    for (auto& f : files) f = fs::absolute(f).string();
    return run_command(app.get_subcommands().front()->get_name(), cfg, files, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace vlfuse::cli
