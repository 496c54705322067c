#include "grerank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grerank/error.hpp"
#include "grerank/subset_mask.hpp"

namespace grerank::metrics {

namespace {

void check(std::span<const std::size_t> ranking, std::span<const std::size_t> gold, std::size_t k) {
  if (gold.empty()) throw ContractError("ranking metrics need a nonempty gold set");
  if (k == 0 || k > ranking.size()) {
    throw ContractError("k=" + std::to_string(k) + " outside [1, " + std::to_string(ranking.size()) + "]");
  }
  std::vector<bool> seen(ranking.size(), false);
  for (std::size_t r : ranking) {
    if (r >= ranking.size() || seen[r]) throw ContractError("ranking is not a permutation");
    seen[r] = true;
  }
  for (std::size_t g : gold) {
    if (g >= ranking.size()) throw ContractError("gold index out of range");
  }
}

bool is_gold(std::span<const std::size_t> gold, std::size_t doc) {
  return std::find(gold.begin(), gold.end(), doc) != gold.end();
}

}  // namespace

double recall_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> gold, std::size_t k) {
  check(ranking, gold, k);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += is_gold(gold, ranking[i]);
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double ndcg_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> gold, std::size_t k) {
  check(ranking, gold, k);
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double discount = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    if (is_gold(gold, ranking[i])) dcg += discount;
    if (i < gold.size()) ideal += discount;
  }
  return dcg / ideal;
}

double mrr(std::span<const std::size_t> ranking, std::span<const std::size_t> gold) {
  check(ranking, gold, ranking.size());
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (is_gold(gold, ranking[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

RankMetrics rank_metrics(std::span<const double> scores, std::span<const std::size_t> gold, std::size_t k) {
  const std::vector<std::size_t> order = mask::ranking(scores);
  return {recall_at_k(order, gold, k), ndcg_at_k(order, gold, k), mrr(order, gold)};
}

}  // namespace grerank::metrics
