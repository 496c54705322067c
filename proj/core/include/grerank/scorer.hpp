#pragma once

// Trainable rerankers: a bag-of-embeddings MLP over (query, document) pairs,
// and free per-document weights bound to one episode.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "grerank/diff.hpp"
#include "grerank/rng.hpp"
#include "grerank/subset_mask.hpp"
#include "grerank/synthdata.hpp"

namespace grerank::scorer {

struct ScorerConfig {
  std::size_t vocab_size = 64;
  std::size_t embed_dim = 32;
  std::size_t hidden = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

/// w = W2 tanh(W1 [q, d, q*d] + b1) + b2, where q and d are mean-pooled
/// token embeddings of the query and the document.
class MlpScorer {
 public:
  explicit MlpScorer(ScorerConfig config);
  MlpScorer(ScorerConfig config, std::vector<diff::Node> params);

  const ScorerConfig& config() const noexcept { return config_; }
  /// embed [V, d], w1 [3d, H], b1 [1, H], w2 [H, 1], b2 [1].
  const std::vector<diff::Node>& params() const noexcept { return params_; }
  std::vector<diff::Node>& params() noexcept { return params_; }

  const diff::Node& embed() const { return params_[0]; }
  const diff::Node& w1() const { return params_[1]; }
  const diff::Node& b1() const { return params_[2]; }
  const diff::Node& w2() const { return params_[3]; }
  const diff::Node& b2() const { return params_[4]; }

 private:
  ScorerConfig config_;
  std::vector<diff::Node> params_;
};

/// Score of one (query, document) pair, shape {}.
diff::Node score(const MlpScorer& s, const data::Tokens& query, const data::Tokens& doc);

/// Scores of every document of an episode, in document order.
mask::ScoreVector score_all(const MlpScorer& s, const data::Tokens& query, const std::vector<data::Tokens>& docs);
mask::ScoreVector score_all(const MlpScorer& s, const data::Episode& ep);

/// Per-document learnable scalars for one fixed episode, zero at construction.
class FreeWeights {
 public:
  explicit FreeWeights(std::size_t n);

  std::size_t size() const { return w_.size(); }
  const diff::Node& node() const noexcept { return w_; }
  diff::Node& node() noexcept { return w_; }
  mask::ScoreVector scores() const { return mask::ScoreVector(w_); }

 private:
  diff::Node w_;
};

mask::RelaxedMask free_weights_mask(const FreeWeights& fw, const mask::GumbelParams& p, Rng& rng);

void save(const MlpScorer& s, std::ostream& out);
void save(const MlpScorer& s, const std::filesystem::path& path);
MlpScorer load_scorer(std::istream& in);
MlpScorer load_scorer(const std::filesystem::path& path);

}  // namespace grerank::scorer
