#pragma once

// Ranking metrics with binary relevance.

#include <cstddef>
#include <span>
#include <vector>

namespace grerank::metrics {

/// |top-k of ranking ∩ gold| / |gold|.
double recall_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> gold, std::size_t k);
/// DCG@k / ideal DCG@k with gains 1 for gold documents and log2(rank + 1) discounts.
double ndcg_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> gold, std::size_t k);
/// 1 / rank of the first gold document.
double mrr(std::span<const std::size_t> ranking, std::span<const std::size_t> gold);

struct RankMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  double mrr = 0.0;
};

/// Metrics of the ranking induced by scores (descending, ties to lower index).
RankMetrics rank_metrics(std::span<const double> scores, std::span<const std::size_t> gold, std::size_t k);

}  // namespace grerank::metrics
