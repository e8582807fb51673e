#include "render.hpp"

#include <cstdio>
#include <sstream>

#include "config.hpp"

namespace vlfuse::cli {

namespace {

std::string opt_percent(const nlohmann::json& doc, const char* key) {
  return doc.contains(key) && doc.at(key).is_number() ? percent(doc.at(key).get<double>()) : "-";
}

std::string inputs_line(const nlohmann::json& report) {
  std::ostringstream os;
  if (!report.contains("inputs")) return {};
  os << "\nInputs:";
  auto line = [&os](const std::string& role, const nlohmann::json& info) {
    if (info.is_string()) {
      os << "\n- " << role << ": `" << info.get<std::string>() << "`";
      return;
    }
    if (!info.is_object()) return;
    os << "\n- " << role << ": `" << info.value("file", "?") << "`";
    if (info.contains("sha256")) os << " sha256 " << info.at("sha256").get<std::string>().substr(0, 12);
  };
  for (const auto& [role, info] : report.at("inputs").items()) {
    if (info.is_array()) {
      for (const auto& item : info) line(role, item);
    } else {
      line(role, info);
    }
  }
  os << "\n";
  return os.str();
}

std::string render_eval(const nlohmann::json& r) {
  std::ostringstream os;
  const auto& acc = r.at("accuracy");
  os << "## Evaluation\n\n"
     << "| Variant | Samples | Top-1 | Cleaner top-1 | ReaL (Cleaner) |\n"
     << "|---|---:|---:|---:|---:|\n"
     << "| " << r.at("variant").get<std::string>() << " | " << r.at("samples").get<std::size_t>() << " | "
     << opt_percent(acc, "top1") << " | " << opt_percent(acc, "cleaner_top1") << " | " << opt_percent(acc, "real")
     << " |\n";
  os << inputs_line(r);
  return os.str();
}

std::string render_fuse(const nlohmann::json& r) {
  std::ostringstream os;
  const auto& a = r.at("accuracy");
  const auto k_cv = r.at("chosen_k").get<std::size_t>();
  const auto k_val = r.at("validation_best_k").get<std::size_t>();
  os << "## Precision-based fusion\n\n"
     << "| Split | Language | Vision (k=" << k_cv << ", CV) | Vision (k=" << k_val << ", val-optimal) | Fused |\n"
     << "|---|---:|---:|---:|---:|\n";
  auto row = [&](const char* label, const char* key) {
    os << "| " << label << " | " << opt_percent(a.at("language"), key) << " | " << opt_percent(a.at("vision"), key)
       << " | " << opt_percent(a.at("vision_validation_k"), key) << " | " << opt_percent(a.at("fused"), key) << " |\n";
  };
  row("Top-1", "top1");
  if (a.at("fused").contains("real")) {
    row("Cleaner top-1", "cleaner_top1");
    row("ReaL (Cleaner)", "real");
  }
  os << "\nCross-validation: " << r.at("folds").get<std::size_t>() << " folds, seed " << r.at("seed").get<std::uint64_t>()
     << ", templates " << r.at("templates").get<std::string>() << ".\n";
  os << inputs_line(r);
  return os.str();
}

std::string render_sweep(const nlohmann::json& r) {
  std::ostringstream os;
  os << "## k sweep\n\n| k | Top-1 |\n|---:|---:|\n";
  const auto ks = r.at("k_grid").get<std::vector<std::size_t>>();
  const auto acc = r.at("accuracy").get<std::vector<double>>();
  for (std::size_t i = 0; i < ks.size(); ++i) os << "| " << ks[i] << " | " << percent(acc[i]) << " |\n";
  os << "\nBest k: " << r.at("best_k").get<std::size_t>() << "\n";
  os << inputs_line(r);
  return os.str();
}

std::string render_fewshot(const nlohmann::json& r) {
  std::ostringstream os;
  const auto& res = r.at("result");
  const auto ms = res.at("m_grid").get<std::vector<std::size_t>>();
  const auto ks = res.at("k_grid").get<std::vector<std::size_t>>();
  const auto trials = res.at("trials").get<std::vector<std::size_t>>();
  const auto& cells = res.at("cells");
  os << "## Few-shot k-NN (mean ± 95% CI)\n\n| m | trials |";
  for (auto k : ks) os << " k=" << k << " |";
  os << "\n|---:|---:|";
  for (std::size_t i = 0; i < ks.size(); ++i) os << "---:|";
  os << "\n";
  for (std::size_t mi = 0; mi < ms.size(); ++mi) {
    os << "| " << (ms[mi] == 0 ? std::string("all") : std::to_string(ms[mi])) << " | " << trials[mi] << " |";
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const auto& c = cells.at(mi * ks.size() + ki);
      if (!c.at("evaluated").get<bool>()) {
        os << " - |";
        continue;
      }
      const auto& ci = c.at("ci");
      os << " " << percent(ci.at("mean").get<double>()) << " ± " << percent(ci.at("half_width").get<double>()) << " |";
    }
    os << "\n";
  }
  os << inputs_line(r);
  return os.str();
}

std::string render_oracle(const nlohmann::json& r) {
  std::ostringstream os;
  os << "## Oracles\n\n| Family | Members | Best member | Class-level | Image-level |\n|---|---:|---:|---:|---:|\n";
  for (const auto& f : r.at("families")) {
    os << "| " << f.at("name").get<std::string>() << " | " << f.at("members").size() << " | "
       << percent(f.at("best_member_accuracy").get<double>()) << " | " << percent(f.at("class_level").get<double>())
       << " | " << percent(f.at("image_level").get<double>()) << " |\n";
  }
  if (r.contains("double")) {
    const auto& d = r.at("double");
    os << "| vision + language | - | - | " << percent(d.at("class_level").get<double>()) << " | "
       << percent(d.at("image_level").get<double>()) << " |\n";
  }
  os << inputs_line(r);
  return os.str();
}

std::string render_validate(const nlohmann::json& r) {
  std::ostringstream os;
  os << "## Validation\n\n| File | Diagnostics |\n|---|---:|\n";
  for (const auto& s : r.at("stores")) {
    os << "| `" << s.at("file").get<std::string>() << "` | " << s.at("diagnostics").size() << " |\n";
  }
  return os.str();
}

}  // namespace

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\n";
}

std::string percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value * 100.0);
  return buf;
}

std::string number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string render_markdown(const nlohmann::json& report) {
  const auto command = report.value("command", "");
  if (command == "eval") return render_eval(report);
  if (command == "fuse") return render_fuse(report);
  if (command == "sweep") return render_sweep(report);
  if (command == "fewshot") return render_fewshot(report);
  if (command == "oracle") return render_oracle(report);
  if (command == "validate") return render_validate(report);
  throw ConfigError("not a report document (command '" + command + "')");
}

}  // namespace vlfuse::cli
