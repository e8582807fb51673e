#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>

namespace vlfuse::testing {

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += static_cast<double>(a[j]) * b[j];
    aa += static_cast<double>(a[j]) * a[j];
    bb += static_cast<double>(b[j]) * b[j];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t top = ~std::uint64_t{0};
  const std::uint64_t limit = top - top % n;
  for (;;) {
    const std::uint64_t x = rng();
    if (x < limit) return x % n;
  }
}

double t_density(double x, double df) {
  const double log_norm = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) - 0.5 * std::log(df * std::numbers::pi);
  return std::exp(log_norm - (df + 1.0) / 2.0 * std::log1p(x * x / df));
}

double t_cdf_upper_half(double t, double df) {
  // P(0 <= T <= t)
  const int n = 200000;
  const double h = t / n;
  double s = t_density(0.0, df) + t_density(t, df);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * t_density(i * h, df);
  return s * h / 3.0;
}

}  // namespace

NaiveNeighbors naive_top_k(const EmbeddingStore& queries, const EmbeddingStore& refs, std::size_t k,
                           bool exclude_same_id) {
  NaiveNeighbors out;
  for (std::size_t q = 0; q < queries.n(); ++q) {
    std::vector<std::pair<double, std::uint32_t>> all;
    for (std::size_t r = 0; r < refs.n(); ++r) {
      if (exclude_same_id && refs.sample_ids()[r] == queries.sample_ids()[q]) continue;
      all.emplace_back(cosine(queries.row(q), refs.row(r)), static_cast<std::uint32_t>(r));
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    std::vector<std::uint32_t> idx;
    std::vector<double> sim;
    for (std::size_t i = 0; i < k && i < all.size(); ++i) {
      idx.push_back(all[i].second);
      sim.push_back(all[i].first);
    }
    out.indices.push_back(std::move(idx));
    out.similarities.push_back(std::move(sim));
  }
  return out;
}

ClassId naive_vote(std::span<const std::uint32_t> indices, std::span<const double> sims,
                   std::span<const ClassId> ref_classes, std::size_t k) {
  std::map<ClassId, std::pair<std::size_t, double>> tally;
  for (std::size_t i = 0; i < k; ++i) {
    auto& t = tally[ref_classes[indices[i]]];
    ++t.first;
    // Reported similarities are single precision; votes sum those.
    t.second += static_cast<double>(static_cast<float>(sims[i]));
  }
  ClassId best = tally.begin()->first;
  auto best_t = tally.begin()->second;
  for (const auto& [c, t] : tally) {
    if (t.first > best_t.first || (t.first == best_t.first && t.second > best_t.second)) {
      best = c;
      best_t = t;
    }
  }
  return best;
}

std::vector<ClassId> naive_knn(const EmbeddingStore& queries, const EmbeddingStore& refs,
                               std::span<const ClassId> ref_classes, std::size_t k) {
  const auto nn = naive_top_k(queries, refs, k);
  std::vector<ClassId> out;
  for (std::size_t q = 0; q < queries.n(); ++q) out.push_back(naive_vote(nn.indices[q], nn.similarities[q], ref_classes, k));
  return out;
}

CvOracle cv_oracle(const EmbeddingStore& train, std::span<const ClassId> labels, std::size_t num_classes,
                   const std::vector<std::size_t>& k_grid_in, std::size_t folds, std::uint64_t seed) {
  auto k_grid = k_grid_in;
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());

  std::vector<std::size_t> fold(train.n());
  std::size_t dealt = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < train.n(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    std::mt19937_64 rng(mix(mix(mix(seed) ^ 0x666f6c64ULL) ^ c));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[bounded(rng, i)]);
    for (auto i : members) fold[i] = dealt++ % folds;
  }

  CvOracle out;
  out.mean_accuracy.assign(k_grid.size(), 0.0);
  std::vector<std::vector<ClassId>> oof(k_grid.size(), std::vector<ClassId>(train.n()));
  std::size_t used = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> held, rest;
    for (std::size_t i = 0; i < train.n(); ++i) (fold[i] == f ? held : rest).push_back(i);
    if (held.empty()) continue;
    ++used;
    for (std::size_t q : held) {
      std::vector<std::pair<double, std::uint32_t>> all;
      for (std::size_t p = 0; p < rest.size(); ++p) {
        all.emplace_back(cosine(train.row(q), train.row(rest[p])), static_cast<std::uint32_t>(p));
      }
      std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
      });
      std::vector<std::uint32_t> idx;
      std::vector<double> sim;
      std::vector<ClassId> rest_classes;
      for (auto r : rest) rest_classes.push_back(labels[r]);
      for (const auto& [s, i] : all) {
        idx.push_back(i);
        sim.push_back(s);
      }
      for (std::size_t j = 0; j < k_grid.size(); ++j) oof[j][q] = naive_vote(idx, sim, rest_classes, k_grid[j]);
    }
    for (std::size_t j = 0; j < k_grid.size(); ++j) {
      std::size_t hits = 0;
      for (auto q : held) hits += oof[j][q] == labels[q] ? 1 : 0;
      out.mean_accuracy[j] += static_cast<double>(hits) / static_cast<double>(held.size());
    }
  }
  for (auto& a : out.mean_accuracy) a /= static_cast<double>(used);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k_grid.size(); ++j) {
    if (out.mean_accuracy[j] > out.mean_accuracy[best]) best = j;
  }
  out.best_k = k_grid[best];
  out.predictions = oof[best];
  return out;
}

double t_quantile_975(double df) {
  double lo = 0.0, hi = 1.0;
  while (t_cdf_upper_half(hi, df) < 0.475) hi *= 2.0;
  for (int i = 0; i < 80 && hi - lo > 1e-13; ++i) {
    const double mid = 0.5 * (lo + hi);
    (t_cdf_upper_half(mid, df) < 0.475 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double ci_half_width_oracle(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  return t_quantile_975(n - 1.0) * std::sqrt(var) / std::sqrt(n);
}

}  // namespace vlfuse::testing
