#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dol/types.hpp"

namespace dol {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based sub-seed: depends only on (master, stream, counter), so
/// adding a stream never shifts the others.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t counter = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ (stream * 0xd1b54a32d192ed03ULL)) ^ counter);
}

namespace streams {
inline constexpr std::uint64_t train = 1;
inline constexpr std::uint64_t test = 2;
inline constexpr std::uint64_t folds = 3;
inline constexpr std::uint64_t subsample = 4;
inline constexpr std::uint64_t resample = 5;
}  // namespace streams

using Rng = std::mt19937_64;

/// Fold labels in {0..k-1}, balanced sizes, shuffled by seed.
inline std::vector<int> assign_folds(Index n, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::parameter, "cross-validation needs at least 2 folds");
  if (n < k) throw Error(ErrorKind::parameter, "fewer units than folds");
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
  Rng rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

inline void split_fold(const std::vector<int>& labels, int fold, std::vector<Index>& train,
                       std::vector<Index>& held) {
  train.clear();
  held.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == fold ? held : train).push_back(static_cast<Index>(i));
  }
}

}  // namespace dol
