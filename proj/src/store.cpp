#include "vlfuse/store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <openssl/evp.h>
#include <zlib.h>

namespace vlfuse {

static_assert(std::endian::native == std::endian::little,
              "the store container is little-endian and is written with native byte order");

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};
constexpr std::size_t kHeaderSize = 24;
constexpr std::size_t kTrailerSize = 4;

template <typename T>
void put(std::vector<std::uint8_t>& buf, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::uint8_t* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::uint32_t crc_update(std::uint32_t crc, const void* data, std::size_t len) {
  return static_cast<std::uint32_t>(crc32_z(crc, static_cast<const Bytef*>(data), len));
}

std::string hex(const unsigned char* bytes, std::size_t len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(kDigits[bytes[i] >> 4]);
    out.push_back(kDigits[bytes[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(const void* data, std::size_t len) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  if (EVP_Digest(data, len, md.data(), &md_len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  return hex(md.data(), md_len);
}

std::uint8_t label_width_for(std::size_t max_id) {
  if (max_id <= std::numeric_limits<std::uint8_t>::max()) return 1;
  if (max_id <= std::numeric_limits<std::uint16_t>::max()) return 2;
  return 4;
}

class Cursor {
 public:
  Cursor(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  template <typename T>
  T take() {
    require(sizeof(T));
    T v = get<T>(buf_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }

  std::uint32_t take_id(std::uint8_t width) {
    switch (width) {
      case 1: return take<std::uint8_t>();
      case 2: return take<std::uint16_t>();
      default: return take<std::uint32_t>();
    }
  }

  std::string take_string(std::size_t len) {
    require(len);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void require(std::size_t len) const {
    if (buf_.size() - pos_ < len) {
      throw StoreError(StoreErrc::truncated, "label or id block ends early");
    }
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

void add(std::vector<Diagnostic>& out, DiagnosticKind kind, std::optional<std::size_t> sample,
         std::string message) {
  out.push_back(Diagnostic{kind, sample, std::move(message)});
}

}  // namespace

std::string_view to_string(StoreRole role) {
  switch (role) {
    case StoreRole::image: return "image";
    case StoreRole::text: return "text";
    case StoreRole::neighbors: return "neighbors";
  }
  return "unknown";
}

StoreRole role_from_string(std::string_view name) {
  if (name == "image") return StoreRole::image;
  if (name == "text") return StoreRole::text;
  if (name == "neighbors") return StoreRole::neighbors;
  throw std::invalid_argument("unknown store role '" + std::string(name) + "'");
}

std::string_view to_string(StoreErrc code) {
  switch (code) {
    case StoreErrc::io: return "i/o error";
    case StoreErrc::bad_magic: return "bad magic";
    case StoreErrc::version_mismatch: return "version mismatch";
    case StoreErrc::truncated: return "truncated file";
    case StoreErrc::checksum: return "checksum failure";
    case StoreErrc::hash_mismatch: return "content hash mismatch";
    case StoreErrc::bad_manifest: return "bad manifest";
    case StoreErrc::invalid: return "invariant violation";
  }
  return "unknown";
}

std::string_view to_string(DiagnosticKind kind) {
  switch (kind) {
    case DiagnosticKind::shape: return "shape";
    case DiagnosticKind::non_finite: return "non-finite";
    case DiagnosticKind::norm: return "norm";
    case DiagnosticKind::similarity_range: return "similarity-range";
    case DiagnosticKind::duplicate_id: return "duplicate-id";
    case DiagnosticKind::label_count: return "label-count";
    case DiagnosticKind::label_range: return "label-range";
    case DiagnosticKind::manifest: return "manifest";
  }
  return "unknown";
}

std::string format(const Diagnostic& diag) {
  std::ostringstream os;
  os << to_string(diag.kind);
  if (diag.sample) os << " [row " << *diag.sample << "]";
  os << ": " << diag.message;
  return os.str();
}

// ---------------------------------------------------------------------------
// EmbeddingStore / LabelSet

EmbeddingStore::EmbeddingStore(std::size_t n, std::size_t d, std::vector<float> data,
                               std::vector<std::string> sample_ids, StoreRole role)
    : n_(n), d_(d), data_(std::move(data)), ids_(std::move(sample_ids)), role_(role) {
  if (data_.size() != n_ * d_) {
    throw std::invalid_argument("embedding data has " + std::to_string(data_.size()) + " values, expected " +
                                std::to_string(n_) + "x" + std::to_string(d_));
  }
  if (ids_.size() != n_) {
    throw std::invalid_argument("expected " + std::to_string(n_) + " sample ids, got " +
                                std::to_string(ids_.size()));
  }
}

LabelSet::LabelSet(std::size_t num_classes, const std::vector<std::vector<ClassId>>& per_sample)
    : num_classes_(num_classes) {
  offsets_.reserve(per_sample.size() + 1);
  offsets_.push_back(0);
  for (const auto& labels : per_sample) {
    ids_.insert(ids_.end(), labels.begin(), labels.end());
    offsets_.push_back(ids_.size());
  }
}

LabelSet LabelSet::single(std::size_t num_classes, std::span<const ClassId> labels) {
  LabelSet out;
  out.num_classes_ = num_classes;
  out.ids_.assign(labels.begin(), labels.end());
  out.offsets_.resize(labels.size() + 1);
  for (std::size_t i = 0; i <= labels.size(); ++i) out.offsets_[i] = i;
  return out;
}

bool LabelSet::contains(std::size_t i, ClassId c) const noexcept {
  auto ls = labels(i);
  return std::find(ls.begin(), ls.end(), c) != ls.end();
}

bool LabelSet::is_single_label() const noexcept {
  for (std::size_t i = 0; i < size(); ++i) {
    if (offsets_[i + 1] - offsets_[i] != 1) return false;
  }
  return true;
}

ClassId LabelSet::primary(std::size_t i) const {
  auto ls = labels(i);
  if (ls.empty()) throw std::logic_error("sample " + std::to_string(i) + " has no label");
  return ls.front();
}

std::vector<ClassId> LabelSet::primary_labels() const {
  std::vector<ClassId> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = primary(i);
  return out;
}

LabelSet LabelSet::select(std::span<const std::size_t> indices) const {
  LabelSet out;
  out.num_classes_ = num_classes_;
  out.offsets_.reserve(indices.size() + 1);
  out.offsets_.push_back(0);
  for (std::size_t i : indices) {
    auto ls = labels(i);
    out.ids_.insert(out.ids_.end(), ls.begin(), ls.end());
    out.offsets_.push_back(out.ids_.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json doc;
  doc["format"] = "vlfuse-manifest";
  doc["version"] = kStoreVersion;
  doc["content_sha256"] = m.content_sha256;
  doc["split"] = m.split;
  doc["model"] = m.model;
  doc["backbone"] = m.backbone;
  doc["num_classes"] = m.num_classes;
  if (m.has_cleaner()) {
    auto& mask = doc["cleaner_mask"] = nlohmann::json::array();
    for (bool b : m.cleaner_mask) mask.push_back(b ? 1 : 0);
  }
  if (m.multi_labels) {
    auto& ml = doc["multi_labels"] = nlohmann::json::array();
    for (const auto& ls : *m.multi_labels) {
      ml.push_back(ls.empty() ? nlohmann::json(nullptr) : nlohmann::json(ls));
    }
  }
  if (m.classes) doc["classes"] = m.classes->names;
  if (m.prompts) {
    doc["prompts"] = {{"name_set", m.prompts->name_set},
                      {"templates", m.prompts->templates},
                      {"row_templates", m.prompts->row_templates}};
  }
  doc["provenance"] = m.provenance;
  return doc;
}

DatasetManifest manifest_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", "") != "vlfuse-manifest") {
      throw StoreError(StoreErrc::bad_manifest, "missing or unknown 'format' key");
    }
    if (doc.at("version").get<std::uint32_t>() != kStoreVersion) {
      throw StoreError(StoreErrc::version_mismatch, "manifest version " + doc.at("version").dump());
    }
    DatasetManifest m;
    m.content_sha256 = doc.value("content_sha256", "");
    m.split = doc.value("split", "");
    m.model = doc.value("model", "");
    m.backbone = doc.value("backbone", "");
    m.num_classes = doc.at("num_classes").get<std::size_t>();
    if (doc.contains("cleaner_mask")) {
      for (const auto& v : doc["cleaner_mask"]) m.cleaner_mask.push_back(v.get<int>() != 0);
    }
    if (doc.contains("multi_labels")) {
      std::vector<std::vector<ClassId>> ml;
      for (const auto& v : doc["multi_labels"]) {
        ml.push_back(v.is_null() ? std::vector<ClassId>{} : v.get<std::vector<ClassId>>());
      }
      m.multi_labels = std::move(ml);
    }
    if (doc.contains("classes")) {
      m.classes = ClassCatalog{doc["classes"].get<std::map<std::string, std::vector<std::string>>>()};
    }
    if (doc.contains("prompts")) {
      const auto& p = doc["prompts"];
      m.prompts = PromptLayout{p.at("name_set").get<std::string>(), p.at("templates").get<std::vector<std::string>>(),
                               p.at("row_templates").get<std::vector<std::uint32_t>>()};
    }
    if (doc.contains("provenance")) m.provenance = doc["provenance"];
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(StoreErrc::bad_manifest, e.what());
  }
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Diagnostic> validate_store(const EmbeddingStore& store, const LabelSet* labels,
                                       const DatasetManifest* manifest) {
  std::vector<Diagnostic> out;
  const std::size_t n = store.n();
  const std::size_t d = store.d();
  if (n == 0) add(out, DiagnosticKind::shape, std::nullopt, "store has no rows");
  if (d == 0) add(out, DiagnosticKind::shape, std::nullopt, "store has zero dimension");

  constexpr double kSimSlack = 1e-5;
  for (std::size_t i = 0; i < n && d > 0; ++i) {
    auto row = store.row(i);
    bool finite = true;
    double sq = 0.0;
    for (float v : row) {
      if (!std::isfinite(v)) {
        finite = false;
        break;
      }
      sq += static_cast<double>(v) * v;
    }
    if (!finite) {
      add(out, DiagnosticKind::non_finite, i, "row contains NaN or Inf");
      continue;
    }
    if (store.role() == StoreRole::neighbors) {
      for (float v : row) {
        if (v < -1.0 - kSimSlack || v > 1.0 + kSimSlack) {
          add(out, DiagnosticKind::similarity_range, i, "similarity " + std::to_string(v) + " outside [-1, 1]");
          break;
        }
      }
    } else {
      const double norm = std::sqrt(sq);
      if (std::abs(norm - 1.0) > kNormTolerance) {
        add(out, DiagnosticKind::norm, i, "L2 norm " + std::to_string(norm) + " is not within 1e-3 of 1");
      }
    }
  }

  std::unordered_map<std::string_view, std::size_t> seen;
  seen.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = seen.emplace(store.sample_ids()[i], i);
    if (!inserted) {
      add(out, DiagnosticKind::duplicate_id, i,
          "sample id '" + store.sample_ids()[i] + "' already used by row " + std::to_string(it->second));
    }
  }

  std::size_t num_classes = labels ? labels->num_classes() : 0;
  if (manifest) {
    if (manifest->num_classes == 0) add(out, DiagnosticKind::manifest, std::nullopt, "class count is zero");
    if (labels && labels->num_classes() != manifest->num_classes) {
      add(out, DiagnosticKind::manifest, std::nullopt,
          "label set has " + std::to_string(labels->num_classes()) + " classes, manifest says " +
              std::to_string(manifest->num_classes));
    }
    num_classes = manifest->num_classes;
  }

  if (labels) {
    if (labels->size() != n) {
      add(out, DiagnosticKind::shape, std::nullopt,
          "label set covers " + std::to_string(labels->size()) + " samples, store has " + std::to_string(n));
    } else {
      const std::size_t expected = store.role() == StoreRole::neighbors ? d : 1;
      for (std::size_t i = 0; i < n; ++i) {
        auto ls = labels->labels(i);
        if (ls.size() != expected) {
          add(out, DiagnosticKind::label_count, i,
              "has " + std::to_string(ls.size()) + " labels, expected " + std::to_string(expected));
        }
        for (ClassId c : ls) {
          if (c >= num_classes) {
            add(out, DiagnosticKind::label_range, i,
                "label " + std::to_string(c) + " out of range [0, " + std::to_string(num_classes) + ")");
          }
        }
      }
    }
  }

  if (manifest) {
    const auto& m = *manifest;
    if (m.has_cleaner() && m.cleaner_mask.size() != n) {
      add(out, DiagnosticKind::manifest, std::nullopt,
          "cleaner mask has " + std::to_string(m.cleaner_mask.size()) + " entries, store has " + std::to_string(n));
    }
    if (m.multi_labels) {
      const auto& ml = *m.multi_labels;
      if (!m.has_cleaner()) {
        add(out, DiagnosticKind::manifest, std::nullopt, "multi-labels present without a cleaner mask");
      } else if (ml.size() != n || m.cleaner_mask.size() != n) {
        add(out, DiagnosticKind::manifest, std::nullopt, "multi-label list length differs from store size");
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          if (m.cleaner_mask[i] == ml[i].empty()) {
            add(out, DiagnosticKind::manifest, i,
                m.cleaner_mask[i] ? "cleaner sample without multi-labels" : "multi-labels outside the cleaner mask");
          }
          for (ClassId c : ml[i]) {
            if (c >= num_classes) {
              add(out, DiagnosticKind::label_range, i, "multi-label " + std::to_string(c) + " out of range");
            }
          }
        }
      }
    }
    if (m.classes) {
      for (const auto& [set, names] : m.classes->names) {
        if (names.size() != num_classes) {
          add(out, DiagnosticKind::manifest, std::nullopt,
              "name set '" + set + "' has " + std::to_string(names.size()) + " names for " +
                  std::to_string(num_classes) + " classes");
        }
        for (std::size_t c = 0; c < names.size(); ++c) {
          if (names[c].empty()) {
            add(out, DiagnosticKind::manifest, std::nullopt,
                "name set '" + set + "' has an empty name for class " + std::to_string(c));
          }
        }
      }
    }
    if (m.prompts) {
      const auto& p = *m.prompts;
      const std::size_t t_count = p.templates.size();
      if (t_count == 0) add(out, DiagnosticKind::manifest, std::nullopt, "prompt layout has no templates");
      if (p.row_templates.size() != n) {
        add(out, DiagnosticKind::manifest, std::nullopt, "prompt layout does not cover every row");
      } else if (t_count > 0 && labels && labels->size() == n) {
        if (t_count * num_classes != n) {
          add(out, DiagnosticKind::manifest, std::nullopt,
              "prompt bank has " + std::to_string(n) + " rows, expected " + std::to_string(t_count) + "x" +
                  std::to_string(num_classes));
        }
        std::vector<std::uint8_t> hit(t_count * num_classes, 0);
        for (std::size_t i = 0; i < n; ++i) {
          const auto t = p.row_templates[i];
          auto ls = labels->labels(i);
          if (t >= t_count) {
            add(out, DiagnosticKind::manifest, i, "template id " + std::to_string(t) + " out of range");
            continue;
          }
          if (ls.size() != 1 || ls[0] >= num_classes) continue;
          auto& slot = hit[t * num_classes + ls[0]];
          if (slot) {
            add(out, DiagnosticKind::manifest, i,
                "duplicate prompt (template " + std::to_string(t) + ", class " + std::to_string(ls[0]) + ")");
          }
          slot = 1;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

std::filesystem::path manifest_path(const std::filesystem::path& store_path) {
  auto p = store_path;
  p += ".json";
  return p;
}

std::string content_hash(const EmbeddingStore& store) {
  auto data = store.data();
  return sha256_hex(data.data(), data.size_bytes());
}

void save_store(const StoreBundle& bundle, const std::filesystem::path& path) {
  save_store(bundle.store, bundle.labels, bundle.manifest, path);
}

void save_store(const EmbeddingStore& store, const LabelSet& labels, const DatasetManifest& manifest,
                const std::filesystem::path& path) {
  if (auto diags = validate_store(store, &labels, &manifest); !diags.empty()) {
    throw StoreError(StoreErrc::invalid,
                     format(diags.front()) + (diags.size() > 1 ? " (+" + std::to_string(diags.size() - 1) + " more)" : ""));
  }

  std::size_t max_id = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (ClassId c : labels.labels(i)) max_id = std::max<std::size_t>(max_id, c);
  }
  const std::uint8_t width = label_width_for(max_id);

  std::vector<std::uint8_t> header;
  header.insert(header.end(), kMagic.begin(), kMagic.end());
  put<std::uint32_t>(header, kStoreVersion);
  put<std::uint64_t>(header, store.n());
  put<std::uint32_t>(header, static_cast<std::uint32_t>(store.d()));
  put<std::uint8_t>(header, static_cast<std::uint8_t>(store.role()));
  put<std::uint8_t>(header, width);
  put<std::uint16_t>(header, 0);

  std::vector<std::uint8_t> tail;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto ls = labels.labels(i);
    put<std::uint32_t>(tail, static_cast<std::uint32_t>(ls.size()));
    for (ClassId c : ls) {
      if (width == 1) put<std::uint8_t>(tail, static_cast<std::uint8_t>(c));
      else if (width == 2) put<std::uint16_t>(tail, static_cast<std::uint16_t>(c));
      else put<std::uint32_t>(tail, c);
    }
  }
  for (const auto& id : store.sample_ids()) {
    put<std::uint32_t>(tail, static_cast<std::uint32_t>(id.size()));
    tail.insert(tail.end(), id.begin(), id.end());
  }

  auto data = store.data();
  std::uint32_t crc = crc_update(0, header.data() + kMagic.size(), header.size() - kMagic.size());
  crc = crc_update(crc, data.data(), data.size_bytes());
  crc = crc_update(crc, tail.data(), tail.size());

  DatasetManifest sidecar = manifest;
  sidecar.content_sha256 = content_hash(store);
  nlohmann::json doc = to_json(sidecar);
  doc["store"] = path.filename().string();
  doc["role"] = std::string(to_string(store.role()));
  doc["n"] = store.n();
  doc["d"] = store.d();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw StoreError(StoreErrc::io, "cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    os.write(reinterpret_cast<const char*>(tail.data()), static_cast<std::streamsize>(tail.size()));
    os.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    if (!os) throw StoreError(StoreErrc::io, "write failed for " + tmp.string());
  }
  {
    std::ofstream os(manifest_path(path), std::ios::trunc);
    if (!os) throw StoreError(StoreErrc::io, "cannot write manifest " + manifest_path(path).string());
    os << doc.dump(2) << '\n';
    if (!os) throw StoreError(StoreErrc::io, "write failed for " + manifest_path(path).string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw StoreError(StoreErrc::io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

StoreBundle read_store(const std::filesystem::path& path) {
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw StoreError(StoreErrc::io, "cannot stat " + path.string() + ": " + ec.message());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StoreError(StoreErrc::io, "cannot open " + path.string());

  if (file_size < kMagic.size()) throw StoreError(StoreErrc::truncated, path.string() + " is shorter than its magic");
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (magic != kMagic) throw StoreError(StoreErrc::bad_magic, path.string() + " is not an EMB1 store");
  if (file_size < kHeaderSize + kTrailerSize) throw StoreError(StoreErrc::truncated, path.string() + " has no complete header");

  std::array<std::uint8_t, kHeaderSize> header{};
  std::memcpy(header.data(), magic.data(), magic.size());
  is.read(reinterpret_cast<char*>(header.data() + 4), kHeaderSize - 4);
  const auto version = get<std::uint32_t>(header.data() + 4);
  if (version != kStoreVersion) {
    throw StoreError(StoreErrc::version_mismatch, "store version " + std::to_string(version) + ", expected " +
                                                      std::to_string(kStoreVersion));
  }
  const auto n = get<std::uint64_t>(header.data() + 8);
  const auto d = get<std::uint32_t>(header.data() + 16);
  const auto role_byte = header[20];
  const auto width = header[21];

  const std::uint64_t budget = file_size - kHeaderSize - kTrailerSize;
  if (d != 0 && n > budget / sizeof(float) / d) {
    throw StoreError(StoreErrc::truncated, "header announces " + std::to_string(n) + "x" + std::to_string(d) +
                                               " values but the file holds " + std::to_string(file_size) + " bytes");
  }
  const std::size_t values = static_cast<std::size_t>(n) * d;
  std::vector<float> data(values);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(values * sizeof(float)));
  std::vector<std::uint8_t> tail(budget - values * sizeof(float));
  is.read(reinterpret_cast<char*>(tail.data()), static_cast<std::streamsize>(tail.size()));
  std::uint32_t stored_crc = 0;
  is.read(reinterpret_cast<char*>(&stored_crc), sizeof(stored_crc));
  if (!is) throw StoreError(StoreErrc::io, "read failed for " + path.string());

  std::uint32_t crc = crc_update(0, header.data() + 4, kHeaderSize - 4);
  crc = crc_update(crc, data.data(), values * sizeof(float));
  crc = crc_update(crc, tail.data(), tail.size());
  if (crc != stored_crc) throw StoreError(StoreErrc::checksum, "CRC-32 mismatch in " + path.string());

  if (role_byte > static_cast<std::uint8_t>(StoreRole::neighbors)) {
    throw StoreError(StoreErrc::invalid, "unknown role byte " + std::to_string(role_byte));
  }
  if (width != 1 && width != 2 && width != 4) {
    throw StoreError(StoreErrc::invalid, "unsupported label width " + std::to_string(width));
  }

  Cursor cur(tail);
  std::vector<std::vector<ClassId>> per_sample(n);
  for (auto& ls : per_sample) {
    const auto count = cur.take<std::uint32_t>();
    if (count > cur.remaining() / width) throw StoreError(StoreErrc::truncated, "label list ends early");
    ls.resize(count);
    for (auto& c : ls) c = cur.take_id(width);
  }
  std::vector<std::string> ids(n);
  for (auto& id : ids) id = cur.take_string(cur.take<std::uint32_t>());
  if (cur.remaining() != 0) throw StoreError(StoreErrc::invalid, "trailing bytes after the id block");

  const auto mpath = manifest_path(path);
  std::ifstream ms(mpath);
  if (!ms) throw StoreError(StoreErrc::io, "missing manifest sidecar " + mpath.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(StoreErrc::bad_manifest, mpath.string() + ": " + e.what());
  }
  DatasetManifest manifest = manifest_from_json(doc);

  EmbeddingStore store(n, d, std::move(data), std::move(ids), static_cast<StoreRole>(role_byte));
  const auto digest = content_hash(store);
  if (manifest.content_sha256 != digest) {
    throw StoreError(StoreErrc::hash_mismatch, mpath.string() + " references content " + manifest.content_sha256 +
                                                   ", store holds " + digest);
  }
  if (doc.contains("n") && doc["n"].get<std::uint64_t>() != n) {
    throw StoreError(StoreErrc::bad_manifest, "manifest row count disagrees with the store header");
  }
  LabelSet labels(manifest.num_classes, per_sample);
  return StoreBundle{std::move(store), std::move(labels), std::move(manifest)};
}

StoreBundle load_store(const std::filesystem::path& path) {
  auto bundle = read_store(path);
  if (auto diags = validate_store(bundle.store, &bundle.labels, &bundle.manifest); !diags.empty()) {
    throw StoreError(StoreErrc::invalid, path.string() + ": " + format(diags.front()) +
                                             (diags.size() > 1 ? " (+" + std::to_string(diags.size() - 1) + " more)" : ""));
  }
  return bundle;
}

std::vector<std::size_t> mask_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

StoreBundle subset(const StoreBundle& bundle, const std::vector<bool>& mask) {
  const auto& src = bundle.store;
  if (mask.size() != src.n()) {
    throw std::invalid_argument("mask has " + std::to_string(mask.size()) + " entries, store has " +
                                std::to_string(src.n()) + " rows");
  }
  const auto keep = mask_indices(mask);
  if (keep.empty()) throw std::invalid_argument("mask selects no rows; a store needs at least one");

  std::vector<float> data;
  data.reserve(keep.size() * src.d());
  std::vector<std::string> ids;
  ids.reserve(keep.size());
  for (std::size_t i : keep) {
    auto row = src.row(i);
    data.insert(data.end(), row.begin(), row.end());
    ids.push_back(src.sample_ids()[i]);
  }

  DatasetManifest m = bundle.manifest;
  if (m.has_cleaner()) {
    std::vector<bool> cm;
    cm.reserve(keep.size());
    for (std::size_t i : keep) cm.push_back(m.cleaner_mask.at(i));
    m.cleaner_mask = std::move(cm);
  }
  if (m.multi_labels) {
    std::vector<std::vector<ClassId>> ml;
    ml.reserve(keep.size());
    for (std::size_t i : keep) ml.push_back(m.multi_labels->at(i));
    m.multi_labels = std::move(ml);
  }
  if (m.prompts) {
    std::vector<std::uint32_t> rt;
    for (std::size_t i : keep) rt.push_back(m.prompts->row_templates.at(i));
    m.prompts->row_templates = std::move(rt);
  }

  EmbeddingStore store(keep.size(), src.d(), std::move(data), std::move(ids), src.role());
  if (!m.content_sha256.empty()) m.content_sha256 = content_hash(store);
  LabelSet labels = bundle.labels.size() == src.n() ? bundle.labels.select(keep) : bundle.labels;
  return StoreBundle{std::move(store), std::move(labels), std::move(m)};
}

}  // namespace vlfuse
