#pragma once

// Reranker training losses: G-Rerank (language loss through a relaxed top-k
// mask) and the LLM-supervised baselines ADist, EMDR, PDist and LOOP. Every
// loss is minimized; baseline targets are constants.

#include <span>
#include <vector>

#include "grerank/attention.hpp"
#include "grerank/diff.hpp"
#include "grerank/reader.hpp"
#include "grerank/rng.hpp"
#include "grerank/subset_mask.hpp"
#include "grerank/synthdata.hpp"

namespace grerank::obj {

/// log p(answer | query, doc_i) with only document i visible, and optionally
/// log p(answer | query, all documents but i).
struct DocLikelihoods {
  std::vector<double> isolated;
  std::vector<double> leave_one_out;
};

DocLikelihoods doc_likelihoods(const reader::Reader& reader, const data::Episode& ep, const attn::TokenBank& bank,
                               bool leave_one_out);

/// Per-document attention mass under the all-ones mask, averaged over
/// decoding steps and hops, and mean value-vector norm.
struct AttentionStats {
  std::vector<double> alpha;
  std::vector<double> value_norm;
};

AttentionStats attention_stats(const reader::Reader& reader, const data::Episode& ep, const attn::TokenBank& bank);

/// Language loss of the frozen reader under a given soft mask.
diff::Node masked_language_loss(const reader::Reader& reader, const data::Episode& ep, const attn::TokenBank& bank,
                                const mask::RelaxedMask& m);

/// G-Rerank: language loss under a fresh relaxed top-k mask of w. With
/// noise=false every draw is the noiseless softmax (the Gumbel ablation).
diff::Node grerank_loss(const mask::ScoreVector& w, const reader::Reader& reader, const data::Episode& ep,
                        const attn::TokenBank& bank, const mask::GumbelParams& p, Rng& rng, bool noise = true,
                        mask::RelaxedMask* mask_out = nullptr);

/// G-Rerank with replayed noise, for finite-difference checks.
diff::Node grerank_loss(const mask::ScoreVector& w, const reader::Reader& reader, const data::Episode& ep,
                        const attn::TokenBank& bank, const mask::GumbelParams& p,
                        std::span<const diff::Array> noise);

/// p_attn(k) proportional to exp(alpha_k * norm_k).
std::vector<double> adist_target(const AttentionStats& stats);
/// softmax of the isolated log-likelihoods.
std::vector<double> pdist_target(std::span<const double> log_lik);
/// Posterior p_lm(a|q,p_k) p_R(k) / sum_j p_lm(a|q,p_j) p_R(j).
std::vector<double> emdr_posterior(std::span<const double> log_lik, std::span<const double> p_r);
/// p_loop(k) proportional to exp(-log p_lm(a | D without k)).
std::vector<double> loop_target(std::span<const double> loo_log_lik);

/// KL(target || softmax(w)).
diff::Node kl_to_scores(std::span<const double> target, const mask::ScoreVector& w);

/// KL(p_attn || p_R).
diff::Node adist_loss(const mask::ScoreVector& w, const AttentionStats& stats);
/// -log sum_k p_lm(a|q,p_k) p_R(k).
diff::Node emdr_loss(const mask::ScoreVector& w, std::span<const double> log_lik);
/// KL(p_R || softmax(log_lik)).
diff::Node pdist_loss(const mask::ScoreVector& w, std::span<const double> log_lik);
/// KL(p_loop || p_R). Requires at least two documents.
diff::Node loop_loss(const mask::ScoreVector& w, std::span<const double> loo_log_lik);

/// softmax(w) as plain values.
std::vector<double> reranker_distribution(const mask::ScoreVector& w);

}  // namespace grerank::obj
