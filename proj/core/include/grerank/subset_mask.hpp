#pragma once

// Gumbel perturbation, relaxed one-hot sampling, and the relaxed top-k subset
// mask built as the elementwise maximum of k independent relaxed samples.

#include <cstddef>
#include <span>
#include <vector>

#include "grerank/diff.hpp"
#include "grerank/rng.hpp"

namespace grerank::mask {

/// Reranker scores for one episode's candidates, as a rank-1 graph node.
class ScoreVector {
 public:
  /// Throws ContractError unless w is rank 1 with finite entries.
  explicit ScoreVector(diff::Node w);
  static ScoreVector constant(std::vector<double> w);

  const diff::Node& node() const noexcept { return w_; }
  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_.value()[i]; }
  std::span<const double> values() const { return w_.value().values(); }

 private:
  diff::Node w_;
};

struct GumbelParams {
  static constexpr double kMinTau = 1e-4;

  double tau = 0.5;
  double kappa = 1.0;
  std::size_t k = 5;

  /// Checks tau >= kMinTau, kappa >= 0 and 1 <= k <= n.
  void validate(std::size_t n) const;
};

/// Uniform draws are clamped to [kUniformLow, kUniformHigh] before the double log.
inline constexpr double kUniformLow = 1e-12;
inline constexpr double kUniformHigh = 1.0 - 1e-12;
/// Lower bound applied to mask entries so underflowed softmax tails stay positive.
inline constexpr double kMaskFloor = 1e-300;

/// -log(-log(u)) with u clamped into [kUniformLow, kUniformHigh].
double gumbel_from_uniform(double u);

/// n independent Gumbel(0, 1) draws.
diff::Array gumbel_noise(std::size_t n, Rng& rng);

/// g + kappa * w, differentiable in w.
diff::Node perturb(const diff::Node& w, const diff::Array& g, double kappa);

/// softmax(w_tilde / tau). Throws ContractError when tau is below the floor.
diff::Node relaxed_onehot(const diff::Node& w_tilde, double tau);

struct RelaxedMask {
  diff::Node m;
  GumbelParams params;
  /// The k relaxed one-hot samples whose elementwise maximum is m.
  std::vector<diff::Node> draws;
  /// Noise used by each draw, kept so a finite-difference check can replay it.
  std::vector<diff::Array> noise;

  std::size_t size() const { return m.size(); }
  /// max_i m_i / sum_j m_j.
  double max_normalized_weight() const;
};

/// Relaxed top-k mask with fresh noise drawn from rng.
RelaxedMask relaxed_topk(const ScoreVector& w, const GumbelParams& p, Rng& rng);

/// Relaxed top-k mask with caller-supplied noise (one array per draw).
RelaxedMask relaxed_topk(const ScoreVector& w, const GumbelParams& p, std::span<const diff::Array> noise);

/// The noise-free ablation: the mask is the single softmax(kappa * w / tau).
RelaxedMask noiseless_mask(const ScoreVector& w, const GumbelParams& p);

/// softmax(kappa * w): the distribution of the argmax of one perturbed draw.
std::vector<double> selection_probability(std::span<const double> w, double kappa);

/// Indices of the k largest scores, ties to the lowest index, sorted ascending.
std::vector<std::size_t> hard_topk(std::span<const double> w, std::size_t k);

/// Indices ordered by descending score, ties to the lowest index.
std::vector<std::size_t> ranking(std::span<const double> w);

}  // namespace grerank::mask
