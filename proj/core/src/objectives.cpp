#include "grerank/objectives.hpp"

#include <cmath>
#include <limits>

#include "grerank/error.hpp"

namespace grerank::obj {

using diff::Array;
using diff::Node;

DocLikelihoods doc_likelihoods(const reader::Reader& reader, const data::Episode& ep, const attn::TokenBank& bank,
                               bool leave_one_out) {
  const std::size_t n = ep.docs.size();
  if (bank.docs() != n) throw ContractError("doc_likelihoods: bank does not match episode");
  DocLikelihoods out;
  for (std::size_t i = 0; i < n; ++i) {
    out.isolated.push_back(
        reader::answer_log_likelihood(reader, ep.query, ep.answer, bank, attn::MaskVector::only(n, i)));
  }
  if (leave_one_out) {
    if (n < 2) throw ContractError("leave-one-out likelihoods need at least two documents");
    for (std::size_t i = 0; i < n; ++i) {
      out.leave_one_out.push_back(
          reader::answer_log_likelihood(reader, ep.query, ep.answer, bank, attn::MaskVector::all_but(n, i)));
    }
  }
  return out;
}

AttentionStats attention_stats(const reader::Reader& reader, const data::Episode& ep, const attn::TokenBank& bank) {
  const std::size_t n = bank.docs();
  AttentionStats out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const attn::MaskVector all = attn::MaskVector::all(n);
  data::Tokens prefix = ep.query;
  std::size_t sites = 0;
  for (std::size_t s = 0; s < ep.answer.size(); ++s) {
    const reader::StepOutput step = reader::decode_step(reader, prefix, bank, all);
    for (const Node& table : step.attention) {
      const std::vector<double> mass = attn::document_mass(table.value(), bank);
      for (std::size_t i = 0; i < n; ++i) out.alpha[i] += mass[i];
      ++sites;
    }
    prefix.push_back(ep.answer[s]);
  }
  for (double& a : out.alpha) a /= static_cast<double>(sites);
  const Array& v = bank.values().value();
  const std::size_t dv = bank.value_dim();
  for (std::size_t r = 0; r < bank.tokens(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < dv; ++c) sq += v[r * dv + c] * v[r * dv + c];
    out.value_norm[bank.token_doc()[r]] += std::sqrt(sq);
  }
  for (std::size_t i = 0; i < n; ++i) out.value_norm[i] /= static_cast<double>(bank.doc_lengths()[i]);
  return out;
}

Node masked_language_loss(const reader::Reader& reader, const data::Episode& ep, const attn::TokenBank& bank,
                          const mask::RelaxedMask& m) {
  return reader::language_loss(reader, ep.query, ep.answer, bank, attn::MaskVector::soft(m.m));
}

Node grerank_loss(const mask::ScoreVector& w, const reader::Reader& reader, const data::Episode& ep,
                  const attn::TokenBank& bank, const mask::GumbelParams& p, Rng& rng, bool noise,
                  mask::RelaxedMask* mask_out) {
  mask::RelaxedMask m = noise ? mask::relaxed_topk(w, p, rng) : mask::noiseless_mask(w, p);
  Node loss = masked_language_loss(reader, ep, bank, m);
  if (mask_out) *mask_out = std::move(m);
  return loss;
}

Node grerank_loss(const mask::ScoreVector& w, const reader::Reader& reader, const data::Episode& ep,
                  const attn::TokenBank& bank, const mask::GumbelParams& p, std::span<const Array> noise) {
  return masked_language_loss(reader, ep, bank, mask::relaxed_topk(w, p, noise));
}

namespace {

std::vector<double> softmax_values(std::span<const double> x) {
  if (x.empty()) throw ContractError("softmax of an empty vector");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - hi);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

void check_finite(std::span<const double> x, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DomainError(std::string(what) + ": non-finite entry", i);
  }
}

void check_size(std::size_t got, const mask::ScoreVector& w, const char* what) {
  if (got != w.size()) {
    throw ContractError(std::string(what) + ": " + std::to_string(got) + " targets for " + std::to_string(w.size()) +
                        " scores");
  }
}

}  // namespace

std::vector<double> adist_target(const AttentionStats& stats) {
  if (stats.alpha.size() != stats.value_norm.size()) throw ContractError("adist_target: size mismatch");
  std::vector<double> x(stats.alpha.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = stats.alpha[i] * stats.value_norm[i];
  return softmax_values(x);
}

std::vector<double> pdist_target(std::span<const double> log_lik) {
  check_finite(log_lik, "pdist_target");
  return softmax_values(log_lik);
}

std::vector<double> emdr_posterior(std::span<const double> log_lik, std::span<const double> p_r) {
  if (log_lik.size() != p_r.size()) throw ContractError("emdr_posterior: size mismatch");
  std::vector<double> x(log_lik.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = log_lik[i] + std::log(p_r[i]);
  return softmax_values(x);
}

std::vector<double> loop_target(std::span<const double> loo_log_lik) {
  if (loo_log_lik.size() < 2) throw ContractError("loop_target: leave-one-out needs at least two documents");
  check_finite(loo_log_lik, "loop_target");
  std::vector<double> x(loo_log_lik.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = -loo_log_lik[i];
  return softmax_values(x);
}

std::vector<double> reranker_distribution(const mask::ScoreVector& w) { return softmax_values(w.values()); }

Node kl_to_scores(std::span<const double> target, const mask::ScoreVector& w) {
  check_size(target.size(), w, "kl_to_scores");
  double neg_entropy = 0.0;
  for (double t : target) {
    if (t < 0.0) throw ContractError("kl_to_scores: negative target mass");
    if (t > 0.0) neg_entropy += t * std::log(t);
  }
  Node cross = diff::sum(diff::mul(diff::constant(Array::vector({target.begin(), target.end()})),
                                   diff::log_softmax(w.node(), 0)));
  return diff::add_scalar(diff::neg(cross), neg_entropy);
}

Node adist_loss(const mask::ScoreVector& w, const AttentionStats& stats) {
  return kl_to_scores(adist_target(stats), w);
}

Node emdr_loss(const mask::ScoreVector& w, std::span<const double> log_lik) {
  check_size(log_lik.size(), w, "emdr_loss");
  check_finite(log_lik, "emdr_loss");
  Node joint = diff::add(diff::constant(Array::vector({log_lik.begin(), log_lik.end()})),
                         diff::log_softmax(w.node(), 0));
  return diff::neg(diff::logsumexp(joint));
}

Node pdist_loss(const mask::ScoreVector& w, std::span<const double> log_lik) {
  check_size(log_lik.size(), w, "pdist_loss");
  const std::vector<double> t = pdist_target(log_lik);
  std::vector<double> log_t(t.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : log_lik) hi = std::max(hi, x);
  double z = 0.0;
  for (double x : log_lik) z += std::exp(x - hi);
  for (std::size_t i = 0; i < t.size(); ++i) log_t[i] = log_lik[i] - hi - std::log(z);
  Node log_p = diff::log_softmax(w.node(), 0);
  return diff::sum(diff::mul(diff::exp(log_p), diff::sub(log_p, diff::constant(Array::vector(std::move(log_t))))));
}

Node loop_loss(const mask::ScoreVector& w, std::span<const double> loo_log_lik) {
  check_size(loo_log_lik.size(), w, "loop_loss");
  return kl_to_scores(loop_target(loo_log_lik), w);
}

}  // namespace grerank::obj
