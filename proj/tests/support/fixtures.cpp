#include "fixtures.hpp"

#include <cmath>
#include <numbers>

#include <unistd.h>

namespace vlfuse::testing {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1p-53; }

double Normal::operator()() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 == 0.0) u1 = uniform01(rng_);
  const double u2 = uniform01(rng_);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

void normalize(std::span<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
}

EmbeddingStore random_store(std::size_t n, std::size_t d, std::uint64_t seed, StoreRole role,
                            const std::string& prefix) {
  Normal g(seed);
  std::vector<float> data(n * d);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) data[i * d + j] = static_cast<float>(g());
    normalize(std::span<float>(data).subspan(i * d, d));
    ids[i] = prefix + std::to_string(i);
  }
  return EmbeddingStore(n, d, std::move(data), std::move(ids), role);
}

StoreBundle make_bundle(EmbeddingStore store, const std::vector<ClassId>& labels, std::size_t num_classes,
                        const std::string& split) {
  DatasetManifest m;
  m.split = split;
  m.model = "synthetic";
  m.backbone = "none";
  m.num_classes = num_classes;
  m.content_sha256 = content_hash(store);
  return StoreBundle{std::move(store), LabelSet::single(num_classes, labels), std::move(m)};
}

Split make_blobs(std::size_t classes, std::size_t train_per_class, std::size_t val_per_class, std::size_t d,
                 double spread, std::uint64_t seed) {
  Normal g(seed);
  std::vector<float> centres(classes * d);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) centres[c * d + j] = static_cast<float>(g());
    normalize(std::span<float>(centres).subspan(c * d, d));
  }
  auto draw = [&](std::size_t per_class, const std::string& prefix, const std::string& split) {
    const std::size_t n = classes * per_class;
    std::vector<float> data(n * d);
    std::vector<std::string> ids(n);
    std::vector<ClassId> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % classes;
      for (std::size_t j = 0; j < d; ++j) data[i * d + j] = static_cast<float>(centres[c * d + j] + spread * g());
      normalize(std::span<float>(data).subspan(i * d, d));
      ids[i] = prefix + std::to_string(i);
      labels[i] = static_cast<ClassId>(c);
    }
    return make_bundle(EmbeddingStore(n, d, std::move(data), std::move(ids), StoreRole::image), labels, classes, split);
  };
  Split s;
  s.train = draw(train_per_class, "train-", "train");
  s.val = draw(val_per_class, "val-", "val");
  return s;
}

PromptBank random_bank(std::size_t templates, std::size_t classes, std::size_t d, std::uint64_t seed,
                       const std::string& name_set) {
  const auto defaults = default_templates();
  std::vector<std::string> names;
  for (std::size_t t = 0; t < templates; ++t) {
    names.push_back(t < defaults.size() ? defaults[t] : "variant " + std::to_string(t) + " of a {}.");
  }
  Normal g(seed);
  std::vector<float> rows(templates * classes * d);
  for (std::size_t r = 0; r < templates * classes; ++r) {
    for (std::size_t j = 0; j < d; ++j) rows[r * d + j] = static_cast<float>(g());
    normalize(std::span<float>(rows).subspan(r * d, d));
  }
  return make_prompt_bank(names, name_set, classes, d, std::move(rows));
}

Complementary make_complementary(std::uint64_t seed, std::size_t train_per_class, std::size_t val_per_class,
                                 double other_rate) {
  constexpr std::size_t kClasses = 50;
  constexpr std::size_t kHalf = 25;
  constexpr std::size_t kDim = 2 * kClasses;
  constexpr double kCue = 0.1;
  constexpr double kNoise = 0.07;
  Normal g(seed);
  auto& rng = g.engine();

  auto other_in_half = [&](std::size_t c) {
    const std::size_t base = c < kHalf ? 0 : kHalf;
    std::size_t o = c;
    while (o == c) o = base + static_cast<std::size_t>(uniform01(rng) * kHalf);
    return o;
  };

  auto draw = [&](std::size_t per_class, const std::string& prefix, const std::string& split) {
    const std::size_t n = kClasses * per_class;
    std::vector<float> data(n * kDim, 0.0f);
    std::vector<std::string> ids(n);
    std::vector<ClassId> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % kClasses;
      const bool lower = c < kHalf;
      std::size_t cue = c;
      std::size_t cluster = c;
      const bool keep = uniform01(rng) < other_rate;
      if (lower && !keep) cluster = other_in_half(c);
      if (!lower && !keep) cue = other_in_half(c);
      float* x = data.data() + i * kDim;
      x[cue] = static_cast<float>(kCue);
      for (std::size_t j = kClasses; j < kDim; ++j) x[j] = static_cast<float>(kNoise * g());
      x[kClasses + cluster] += 1.0f;
      normalize(std::span<float>(x, kDim));
      ids[i] = prefix + std::to_string(i);
      labels[i] = static_cast<ClassId>(c);
    }
    return make_bundle(EmbeddingStore(n, kDim, std::move(data), std::move(ids), StoreRole::image), labels, kClasses,
                       split);
  };

  Split s;
  s.train = draw(train_per_class, "train-", "train");
  s.val = draw(val_per_class, "val-", "val");

  const auto templates = default_templates();
  std::vector<float> rows(templates.size() * kClasses * kDim, 0.0f);
  for (std::size_t t = 0; t < templates.size(); ++t) {
    for (std::size_t c = 0; c < kClasses; ++c) {
      float* r = rows.data() + (t * kClasses + c) * kDim;
      for (std::size_t j = 0; j < kClasses; ++j) r[j] = static_cast<float>(0.05 * g());
      r[c] += 1.0f;
      normalize(std::span<float>(r, kDim));
    }
  }
  return Complementary{std::move(s), make_prompt_bank(templates, "OpenAI+", kClasses, kDim, std::move(rows)), kHalf};
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vlfuse-" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vlfuse::testing
