#pragma once

// Cross-attention over per-document token banks: standard, hard-masked, and
// differentiable-masked (soft document weights) variants.

#include <cstddef>
#include <vector>

#include "grerank/diff.hpp"

namespace grerank::attn {

/// Keys and values for every token of n documents, stored document after
/// document. Row r of keys/values belongs to document token_doc()[r].
class TokenBank {
 public:
  TokenBank() = default;
  /// keys [T, d_k], values [T, d_v], doc_lengths summing to T (each >= 1).
  /// token_ids is optional; when given it must hold T entries.
  TokenBank(diff::Node keys, diff::Node values, std::vector<std::size_t> doc_lengths,
            std::vector<std::size_t> token_ids = {});

  const diff::Node& keys() const noexcept { return keys_; }
  const diff::Node& values() const noexcept { return values_; }
  const std::vector<std::size_t>& doc_lengths() const noexcept { return doc_lengths_; }
  const std::vector<std::size_t>& token_doc() const noexcept { return token_doc_; }
  const std::vector<std::size_t>& token_ids() const noexcept { return token_ids_; }
  /// First row of each document.
  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }

  std::size_t docs() const noexcept { return doc_lengths_.size(); }
  std::size_t tokens() const noexcept { return token_doc_.size(); }
  std::size_t key_dim() const { return keys_.value().dim(1); }
  std::size_t value_dim() const { return values_.value().dim(1); }

 private:
  diff::Node keys_;
  diff::Node values_;
  std::vector<std::size_t> doc_lengths_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> token_doc_;
  std::vector<std::size_t> token_ids_;
};

enum class MaskKind { kHard, kSoft };

/// Document-wise mask. Hard masks hold entries in {0, 1} with at least one 1;
/// soft masks hold strictly positive entries and may carry a gradient.
class MaskVector {
 public:
  static MaskVector hard(std::vector<double> m);
  static MaskVector soft(diff::Node m);
  static MaskVector all(std::size_t n);
  static MaskVector only(std::size_t n, std::size_t doc);
  static MaskVector all_but(std::size_t n, std::size_t doc);

  const diff::Node& node() const noexcept { return m_; }
  MaskKind kind() const noexcept { return kind_; }
  std::size_t size() const { return m_.size(); }

 private:
  MaskVector(diff::Node m, MaskKind kind) : m_(std::move(m)), kind_(kind) {}
  diff::Node m_;
  MaskKind kind_;
};

/// Scaled dot products Q·K_r / sqrt(d_k) for every bank row.
diff::Node attention_logits(const diff::Node& query, const TokenBank& bank);

/// Softmax over all bank rows of the attention logits.
diff::Node attention(const diff::Node& query, const TokenBank& bank);

/// Attention restricted to documents whose hard mask entry is 1; masked rows
/// are exactly zero.
diff::Node masked_attention(const diff::Node& query, const TokenBank& bank, const MaskVector& mask);

/// Differentiable masked attention: m_i exp(s_r) / sum_j m_j sum_t exp(s_t).
diff::Node dma(const diff::Node& query, const TokenBank& bank, const MaskVector& mask);

/// Dispatches to masked_attention or dma according to the mask kind.
diff::Node attention(const diff::Node& query, const TokenBank& bank, const MaskVector& mask);

/// Document-weighted softmax of row logits s: p_r = m[doc(r)] exp(s_r) / Z.
/// The building block behind masked_attention and dma; differentiable in s and m.
diff::Node weighted_softmax(const diff::Node& logits, const std::vector<std::size_t>& token_doc,
                            const diff::Node& mask);

/// Context vector sum_r probs[r] * V_r.
diff::Node attend(const diff::Node& probs, const TokenBank& bank);

/// Probability mass per document.
std::vector<double> document_mass(const diff::Array& probs, const TokenBank& bank);

}  // namespace grerank::attn
