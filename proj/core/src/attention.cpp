#include "grerank/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "grerank/error.hpp"

namespace grerank::attn {

namespace {

// Sum that depends only on the multiset of terms.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

}  // namespace

TokenBank::TokenBank(diff::Node keys, diff::Node values, std::vector<std::size_t> doc_lengths,
                     std::vector<std::size_t> token_ids)
    : keys_(std::move(keys)),
      values_(std::move(values)),
      doc_lengths_(std::move(doc_lengths)),
      token_ids_(std::move(token_ids)) {
  if (doc_lengths_.empty()) throw ContractError("TokenBank: no documents");
  if (keys_.value().rank() != 2 || values_.value().rank() != 2) {
    throw ContractError("TokenBank: keys and values must be rank 2");
  }
  const std::size_t total = std::accumulate(doc_lengths_.begin(), doc_lengths_.end(), std::size_t{0});
  if (keys_.value().dim(0) != total || values_.value().dim(0) != total) {
    throw ContractError("TokenBank: " + std::to_string(total) + " tokens but keys " +
                        diff::shape_string(keys_.shape()) + ", values " + diff::shape_string(values_.shape()));
  }
  if (!token_ids_.empty() && token_ids_.size() != total) {
    throw ContractError("TokenBank: token_ids length does not match token count");
  }
  offsets_.reserve(doc_lengths_.size());
  token_doc_.reserve(total);
  std::size_t at = 0;
  for (std::size_t i = 0; i < doc_lengths_.size(); ++i) {
    if (doc_lengths_[i] == 0) throw ContractError("TokenBank: empty document " + std::to_string(i));
    offsets_.push_back(at);
    token_doc_.insert(token_doc_.end(), doc_lengths_[i], i);
    at += doc_lengths_[i];
  }
}

MaskVector MaskVector::hard(std::vector<double> m) {
  bool any = false;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0 && m[i] != 1.0) throw DomainError("hard mask entry outside {0,1}", i);
    any = any || m[i] == 1.0;
  }
  if (!any) throw ContractError("hard mask selects no document");
  return MaskVector(diff::constant(diff::Array::vector(std::move(m))), MaskKind::kHard);
}

MaskVector MaskVector::soft(diff::Node m) {
  if (m.value().rank() != 1) throw ContractError("soft mask must be rank 1");
  const auto v = m.value().values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0) || !std::isfinite(v[i])) throw DomainError("soft mask entry not strictly positive", i);
  }
  return MaskVector(std::move(m), MaskKind::kSoft);
}

MaskVector MaskVector::all(std::size_t n) { return hard(std::vector<double>(n, 1.0)); }

MaskVector MaskVector::only(std::size_t n, std::size_t doc) {
  std::vector<double> m(n, 0.0);
  m.at(doc) = 1.0;
  return hard(std::move(m));
}

MaskVector MaskVector::all_but(std::size_t n, std::size_t doc) {
  std::vector<double> m(n, 1.0);
  m.at(doc) = 0.0;
  return hard(std::move(m));
}

diff::Node attention_logits(const diff::Node& query, const TokenBank& bank) {
  if (query.value().rank() != 1 || query.size() != bank.key_dim()) {
    throw ContractError("attention: query shape " + diff::shape_string(query.shape()) + " vs key dim " +
                        std::to_string(bank.key_dim()));
  }
  return diff::scale(diff::matmul(bank.keys(), query), 1.0 / std::sqrt(static_cast<double>(bank.key_dim())));
}

diff::Node weighted_softmax(const diff::Node& logits, const std::vector<std::size_t>& token_doc,
                            const diff::Node& mask) {
  const diff::Array& s = logits.value();
  const diff::Array& m = mask.value();
  if (s.rank() != 1 || s.size() != token_doc.size()) throw ContractError("weighted_softmax: logits/rows mismatch");
  const std::size_t n = m.size();
  // Max over rows that can carry mass; identical to the global max for soft masks.
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < s.size(); ++r) {
    if (token_doc[r] >= n) throw ContractError("weighted_softmax: row document out of range");
    if (m[token_doc[r]] > 0.0) hi = std::max(hi, s[r]);
  }
  if (!std::isfinite(hi)) throw ContractError("weighted_softmax: mask leaves no row");
  diff::Array u(s.shape());
  std::vector<double> mass(n, 0.0);
  for (std::size_t r = 0; r < s.size(); ++r) {
    u[r] = std::exp(s[r] - hi);
    mass[token_doc[r]] += u[r];
  }
  for (std::size_t i = 0; i < n; ++i) mass[i] *= m[i];
  const double z = sorted_sum(mass);
  diff::Array p(s.shape());
  for (std::size_t r = 0; r < s.size(); ++r) p[r] = m[token_doc[r]] * u[r] / z;

  return diff::make_node(
      "weighted_softmax", std::move(p), {logits, mask},
      [token_doc, u = std::move(u), z, n](const diff::Node& self, const diff::Array& g, std::span<diff::Array*> pg) {
        const diff::Array& p = self.value();
        double gp = 0.0;
        for (std::size_t r = 0; r < p.size(); ++r) gp += g[r] * p[r];
        if (pg[0]) {
          diff::Array& ds = *pg[0];
          for (std::size_t r = 0; r < p.size(); ++r) ds[r] += p[r] * (g[r] - gp);
        }
        if (pg[1]) {
          // dp_r/dm_i = [doc(r) = i] u_r / Z - p_r U_i / Z, with U_i = sum of u over document i.
          std::vector<double> gu(n, 0.0), mass(n, 0.0);
          for (std::size_t r = 0; r < p.size(); ++r) {
            gu[token_doc[r]] += g[r] * u[r];
            mass[token_doc[r]] += u[r];
          }
          diff::Array& dm = *pg[1];
          for (std::size_t i = 0; i < n; ++i) dm[i] += (gu[i] - gp * mass[i]) / z;
        }
      });
}

diff::Node attention(const diff::Node& query, const TokenBank& bank) {
  return weighted_softmax(attention_logits(query, bank), bank.token_doc(), MaskVector::all(bank.docs()).node());
}

diff::Node masked_attention(const diff::Node& query, const TokenBank& bank, const MaskVector& mask) {
  if (mask.kind() != MaskKind::kHard) throw ContractError("masked_attention requires a hard mask");
  if (mask.size() != bank.docs()) throw ContractError("mask length does not match document count");
  return weighted_softmax(attention_logits(query, bank), bank.token_doc(), mask.node());
}

diff::Node dma(const diff::Node& query, const TokenBank& bank, const MaskVector& mask) {
  if (mask.kind() != MaskKind::kSoft) throw ContractError("dma requires a soft mask");
  if (mask.size() != bank.docs()) throw ContractError("mask length does not match document count");
  return weighted_softmax(attention_logits(query, bank), bank.token_doc(), mask.node());
}

diff::Node attention(const diff::Node& query, const TokenBank& bank, const MaskVector& mask) {
  return mask.kind() == MaskKind::kHard ? masked_attention(query, bank, mask) : dma(query, bank, mask);
}

diff::Node attend(const diff::Node& probs, const TokenBank& bank) {
  if (probs.value().rank() != 1 || probs.size() != bank.tokens()) {
    throw ContractError("attend: probabilities " + diff::shape_string(probs.shape()) + " vs " +
                        std::to_string(bank.tokens()) + " bank rows");
  }
  // Per-document partial contexts, combined in sorted order.
  const diff::Array& p = probs.value();
  const diff::Array& v = bank.values().value();
  const std::size_t dv = bank.value_dim();
  const std::size_t n = bank.docs();
  std::vector<double> partial(n * dv, 0.0);
  for (std::size_t r = 0; r < p.size(); ++r) {
    double* row = partial.data() + bank.token_doc()[r] * dv;
    for (std::size_t c = 0; c < dv; ++c) row[c] += p[r] * v.at(r, c);
  }
  diff::Array out(diff::Shape{dv});
  std::vector<double> column(n);
  for (std::size_t c = 0; c < dv; ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = partial[i * dv + c];
    out[c] = sorted_sum(column);
  }
  return diff::make_node("attend", std::move(out), {probs, bank.values()},
                         [dv](const diff::Node& self, const diff::Array& g, std::span<diff::Array*> pg) {
                           const auto parents = self.parents();
                           const diff::Array& p = parents[0].value();
                           const diff::Array& v = parents[1].value();
                           for (std::size_t r = 0; r < p.size(); ++r) {
                             if (pg[0]) {
                               double acc = 0.0;
                               for (std::size_t c = 0; c < dv; ++c) acc += g[c] * v.at(r, c);
                               (*pg[0])[r] += acc;
                             }
                             if (pg[1]) {
                               for (std::size_t c = 0; c < dv; ++c) pg[1]->at(r, c) += p[r] * g[c];
                             }
                           }
                         });
}

std::vector<double> document_mass(const diff::Array& probs, const TokenBank& bank) {
  if (probs.size() != bank.tokens()) throw ContractError("document_mass: size mismatch");
  std::vector<double> out(bank.docs(), 0.0);
  for (std::size_t r = 0; r < probs.size(); ++r) out[bank.token_doc()[r]] += probs[r];
  return out;
}

}  // namespace grerank::attn
