#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace pacbayes {

/// Number of logical blocks used by deterministic reductions. Independent of
/// the OpenMP thread count so results are bit-stable across thread counts.
inline constexpr std::size_t kReductionBlocks = 64;

struct BlockRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::size_t block_count(std::size_t n) { return std::min(n, kReductionBlocks); }

inline BlockRange block_range(std::size_t n, std::size_t blocks, std::size_t b) {
  return {b * n / blocks, (b + 1) * n / blocks};
}

/// Sums per-block vectors with a pairwise tree of fixed topology:
/// level by level, partial[i] += partial[i + stride].
inline std::vector<double> pairwise_tree_sum(std::vector<std::vector<double>>& partial) {
  if (partial.empty()) return {};
  for (std::size_t stride = 1; stride < partial.size(); stride *= 2) {
    for (std::size_t i = 0; i + stride < partial.size(); i += 2 * stride) {
      auto& dst = partial[i];
      const auto& src = partial[i + stride];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  return std::move(partial.front());
}

/// Vector sum over n items: each block of items is accumulated sequentially
/// by `fn(begin, end, acc)` (blocks in parallel), then blocks are combined by
/// pairwise_tree_sum.
template <class BlockFn>
std::vector<double> block_tree_sum(std::size_t n, std::size_t width, BlockFn&& fn) {
  const std::size_t blocks = block_count(n);
  std::vector<std::vector<double>> partial(blocks, std::vector<double>(width, 0.0));
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto r = block_range(n, blocks, b);
    fn(r.begin, r.end, std::span<double>(partial[b]));
  }
  if (blocks == 0) return std::vector<double>(width, 0.0);
  return pairwise_tree_sum(partial);
}

}  // namespace pacbayes
