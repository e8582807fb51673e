#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vlfuse/prompt_bank.hpp"
#include "vlfuse/store.hpp"

namespace vlfuse::testing {

/// Uniform double in [0, 1) from the raw 53 high bits; identical on every platform.
double uniform01(std::mt19937_64& rng);

/// Standard normal by Box-Muller over uniform01 (std::normal_distribution is implementation-defined).
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : rng_(seed) {}
  double operator()();
  std::mt19937_64& engine() noexcept { return rng_; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void normalize(std::span<float> v);

/// n unit rows of Gaussian noise, ids "<prefix><i>".
EmbeddingStore random_store(std::size_t n, std::size_t d, std::uint64_t seed, StoreRole role = StoreRole::image,
                            const std::string& prefix = "s");

/// Store, single labels and a matching manifest (content hash filled in).
StoreBundle make_bundle(EmbeddingStore store, const std::vector<ClassId>& labels, std::size_t num_classes,
                        const std::string& split = "val");

struct Split {
  StoreBundle train;
  StoreBundle val;
};

/// Gaussian clusters around random unit centres: rows = normalize(centre + spread * noise).
Split make_blobs(std::size_t classes, std::size_t train_per_class, std::size_t val_per_class, std::size_t d,
                 double spread, std::uint64_t seed);

/// Random bank over the default template list (truncated or cycled to `templates`).
PromptBank random_bank(std::size_t templates, std::size_t classes, std::size_t d, std::uint64_t seed,
                       const std::string& name_set = "OpenAI+");

/// Fifty classes where the language side is right on classes 0-24 and the vision side on 25-49.
///
/// Dimensions [0, 50) carry a weak one-hot "language" cue; dimensions [50, 100)
/// carry a one-hot cluster centre plus noise that dominates cosine similarity.
/// On the language-perfect half the cluster is the true class only with
/// probability `other_rate` (otherwise a random other class of the same half);
/// on the vision-perfect half the same holds for the language cue.
struct Complementary {
  Split data;
  PromptBank bank;
  std::size_t half = 25;
};

Complementary make_complementary(std::uint64_t seed, std::size_t train_per_class = 40, std::size_t val_per_class = 20,
                                 double other_rate = 0.4);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);

}  // namespace vlfuse::testing
