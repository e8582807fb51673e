#include "vlfuse/predictions.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace vlfuse {

void check_predictions(const PredictionSet& preds, std::size_t num_classes) {
  if (preds.sample_ids.size() != preds.classes.size()) {
    throw std::invalid_argument("prediction set '" + preds.variant + "' has " + std::to_string(preds.sample_ids.size()) +
                                " ids for " + std::to_string(preds.classes.size()) + " predictions");
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!seen.insert(preds.sample_ids[i]).second) {
      throw std::invalid_argument("prediction set '" + preds.variant + "' repeats sample id '" + preds.sample_ids[i] + "'");
    }
    if (preds.classes[i] >= num_classes) {
      throw std::invalid_argument("prediction set '" + preds.variant + "' predicts class " +
                                  std::to_string(preds.classes[i]) + " for '" + preds.sample_ids[i] + "'");
    }
  }
}

PredictionSet align_to(const PredictionSet& preds, const std::vector<std::string>& ids) {
  if (preds.size() != ids.size()) {
    throw std::invalid_argument("prediction set '" + preds.variant + "' has " + std::to_string(preds.size()) +
                                " samples, expected " + std::to_string(ids.size()));
  }
  std::unordered_map<std::string_view, std::size_t> where;
  where.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) where.emplace(preds.sample_ids[i], i);
  PredictionSet out;
  out.variant = preds.variant;
  out.sample_ids = ids;
  out.classes.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = where.find(id);
    if (it == where.end()) throw std::invalid_argument("prediction set '" + preds.variant + "' lacks sample '" + id + "'");
    out.classes.push_back(preds.classes[it->second]);
  }
  return out;
}

PredictionSet select(const PredictionSet& preds, const std::vector<bool>& mask) {
  if (mask.size() != preds.size()) throw std::invalid_argument("mask length differs from prediction count");
  PredictionSet out;
  out.variant = preds.variant;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    out.sample_ids.push_back(preds.sample_ids[i]);
    out.classes.push_back(preds.classes[i]);
  }
  return out;
}

void save_predictions(const PredictionSet& preds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "sample_id,prediction\n";
  for (std::size_t i = 0; i < preds.size(); ++i) os << preds.sample_ids[i] << ',' << preds.classes[i] << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

PredictionSet load_predictions(const std::filesystem::path& path, std::string variant) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  PredictionSet out;
  out.variant = variant.empty() ? "import:" + path.filename().string() : std::move(variant);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("sample_id", 0) == 0) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected 'sample_id,prediction'");
    }
    std::size_t used = 0;
    unsigned long cls = 0;
    const std::string field = line.substr(comma + 1);
    try {
      cls = std::stoul(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != field.size()) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": bad class id '" + field + "'");
    }
    out.sample_ids.push_back(line.substr(0, comma));
    out.classes.push_back(static_cast<ClassId>(cls));
  }
  return out;
}

void VariantFamily::check() const {
  if (members.empty()) throw std::invalid_argument("variant family '" + name + "' is empty");
  const auto& ids = members.front().sample_ids;
  for (const auto& m : members) {
    if (m.sample_ids != ids) {
      throw std::invalid_argument("variant '" + m.variant + "' of family '" + name + "' covers different samples");
    }
    if (m.classes.size() != ids.size()) {
      throw std::invalid_argument("variant '" + m.variant + "' has mismatched id and prediction counts");
    }
  }
}

VariantFamily join(const VariantFamily& a, const VariantFamily& b) {
  VariantFamily out{a.name + "+" + b.name, a.members};
  out.members.insert(out.members.end(), b.members.begin(), b.members.end());
  return out;
}

}  // namespace vlfuse
