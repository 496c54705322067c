#pragma once

// Optimizer, reader pretraining, reranker training for G-Rerank and the
// baselines, mining / reranker / generator evaluation, and the temperature /
// scale sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grerank/diff.hpp"
#include "grerank/reader.hpp"
#include "grerank/scorer.hpp"
#include "grerank/subset_mask.hpp"
#include "grerank/synthdata.hpp"

namespace grerank::train {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<diff::Array> m;
  std::vector<diff::Array> v;
};

/// One bias-corrected Adam update of params from grads. Moments are created
/// on first use. Throws DivergenceError naming the parameter and entry when a
/// gradient is not finite.
void adam_step(std::span<diff::Array* const> params, std::span<const diff::Array* const> grads, AdamState& state,
               double lr);
/// Updates parameter nodes from their accumulated gradients, then zeroes them.
void adam_step(std::span<const diff::Node> params, AdamState& state, double lr);

/// Documents visible to the reader during pretraining: the gold documents,
/// the gold documents plus a random number of distractors (up to `context`
/// documents in total), or every candidate.
enum class PretrainMask { kGold, kGoldPlus, kFull };

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 3e-3;
  PretrainMask mask = PretrainMask::kGold;
  std::size_t context = 5;
  /// Candidates per pretraining episode; 0 keeps the task's count.
  std::size_t candidates = 0;
  std::uint64_t seed = 0;
};

struct PretrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

/// Supervised reader training on freshly generated episodes.
void pretrain(reader::Reader& reader, const data::TaskSpec& task, const PretrainConfig& config,
              const std::function<void(const PretrainRecord&)>& on_record = {});

enum class Method { kGRerank, kADist, kEMDR, kPDist, kLOOP, kFreeWeights };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct TrainConfig {
  Method method = Method::kGRerank;
  mask::GumbelParams gumbel;
  /// false runs the Gumbel ablation: masks are softmax(kappa w / tau) without noise.
  bool noise = true;
  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t eval_interval = 100;
  std::size_t eval_k = 5;
  /// Mining-setting metrics use the first mining_episodes training episodes (0 = all).
  std::size_t mining_episodes = 0;
  /// Generator-setting exact match is computed at the final evaluation.
  bool generator_eval = false;
  /// Training episode used by the free-weights method.
  std::size_t free_weights_episode = 0;
  std::uint64_t data_seed = 1;
  std::uint64_t noise_seed = 2;
  std::uint64_t init_seed = 3;
  scorer::ScorerConfig scorer;
  double divergence_threshold = 1e3;

  void validate() const;
};

struct SettingMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  double mrr = 0.0;
  /// Recall@k restricted to indirect gold documents; negative when no episode has any.
  double indirect_recall = -1.0;
};

struct RunRecord {
  std::size_t step = 0;
  double loss = 0.0;
  /// Mean over the batch of max_i m_i / sum_j m_j; negative for methods without masks.
  double max_weight = -1.0;
  SettingMetrics mining;
  std::optional<SettingMetrics> reranker;
  /// Generator-setting exact match; negative when not measured.
  double exact_match = -1.0;
  double seconds = 0.0;
};

struct TrajectoryPoint {
  std::size_t step = 0;
  double max_weight = 0.0;
  /// Mean entropy of the normalized mask.
  double entropy = 0.0;
};

struct TrainResult {
  std::vector<RunRecord> records;
  std::vector<TrajectoryPoint> trajectory;
  std::optional<scorer::MlpScorer> scorer;
  std::optional<scorer::FreeWeights> weights;
  /// Record with the highest mining recall, and the last record.
  RunRecord best;
  RunRecord last;
};

/// Trains a reranker against a frozen reader. test may be empty.
TrainResult train(const TrainConfig& config, const std::vector<data::Episode>& train_split,
                  const std::vector<data::Episode>& test_split, const reader::Reader& reader,
                  const std::function<void(const RunRecord&)>& on_record = {});

/// Ranking metrics of a scorer over episodes.
SettingMetrics evaluate_ranking(const scorer::MlpScorer& s, std::span<const data::Episode> episodes, std::size_t k);
/// Ranking metrics of free weights on their episode.
SettingMetrics evaluate_ranking(const scorer::FreeWeights& w, const data::Episode& ep, std::size_t k);
/// Ranking metrics of arbitrary per-episode scores.
SettingMetrics evaluate_scores(std::span<const std::vector<double>> scores, std::span<const data::Episode> episodes,
                               std::size_t k);

/// Fraction of episodes where greedy decoding over the hard top-k documents
/// reproduces the answer exactly.
double exact_match(const reader::Reader& reader, std::span<const std::vector<double>> scores,
                   std::span<const data::Episode> episodes, std::size_t k);
std::vector<std::vector<double>> score_episodes(const scorer::MlpScorer& s, std::span<const data::Episode> episodes);

enum class Setting { kMining, kReranker, kGenerator };

struct EvalResult {
  SettingMetrics ranking;
  double exact_match = -1.0;
};

/// mining and reranker rank documents; generator reports exact match.
EvalResult evaluate(Setting setting, const scorer::MlpScorer& s, std::span<const data::Episode> episodes,
                    const reader::Reader* reader, std::size_t k);

struct SweepCell {
  double tau = 0.0;
  double kappa = 0.0;
  std::uint64_t noise_seed = 0;
  TrainResult result;
};

/// Trains one cell per (tau, kappa, noise seed) on a shared split, running
/// cells on up to `threads` threads (0 = hardware concurrency).
std::vector<SweepCell> sweep(const TrainConfig& base, std::span<const double> taus, std::span<const double> kappas,
                             std::span<const std::uint64_t> noise_seeds, const std::vector<data::Episode>& train_split,
                             const std::vector<data::Episode>& test_split, const reader::Reader& reader,
                             std::size_t threads = 0);

std::string to_json(const RunRecord& r);
void write_trajectory_csv(std::span<const TrajectoryPoint> points, std::ostream& out);

}  // namespace grerank::train
