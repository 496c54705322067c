#pragma once

// Tiny fusion-in-decoder reader. Each document is encoded on its own with
// positions restarting at zero; a decoder state built from the query and the
// answer prefix cross-attends to the concatenated token bank through a
// document-wise mask, and the output mixes a vocabulary head with a copy
// distribution over attended tokens.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "grerank/attention.hpp"
#include "grerank/diff.hpp"
#include "grerank/synthdata.hpp"

namespace grerank::reader {

struct ReaderConfig {
  std::size_t vocab_size = 64;
  std::size_t embed_dim = 32;
  std::size_t max_doc_len = 5;
  std::size_t max_query_len = 5;
  std::size_t max_answer_len = 1;
  /// Keys at position t mix embeddings of positions t-window+1 .. t.
  std::size_t window = 5;
  /// Cross-attention hops; every hop uses the same document mask.
  std::size_t hops = 1;
  std::uint64_t seed = 0;
  /// Initial weight of the copy distribution in the output mixture.
  double copy_init = 0.05;

  void validate() const;
  std::size_t position_count() const noexcept;
};

/// Upper bound for the copy weight so the vocabulary head always keeps mass.
inline constexpr double kMaxCopyWeight = 0.999;

struct ReaderParams {
  diff::Node embed;                   // [V, d]
  std::vector<diff::Node> key_proj;   // window x [d, d]
  std::vector<diff::Node> query_proj; // hops x [d, d]
  std::vector<diff::Node> hop_proj;   // (hops - 1) x [d, d]
  diff::Node out_proj;                // [d, V]
  diff::Node copy_weight;             // [1]

  std::vector<diff::Node> all() const;
};

class Reader {
 public:
  /// Fresh parameters drawn from config.seed.
  explicit Reader(ReaderConfig config);
  Reader(ReaderConfig config, ReaderParams params);

  const ReaderConfig& config() const noexcept { return config_; }
  const ReaderParams& params() const noexcept { return params_; }
  ReaderParams& params() noexcept { return params_; }
  /// Sinusoidal table [position_count, d].
  const diff::Array& positions() const noexcept { return positions_; }

  /// Keeps the copy weight inside [0, kMaxCopyWeight]; call after each update.
  void project();
  /// Copy whose parameters are graph constants: building losses on it records
  /// no reader gradients, and copies can be used from separate threads.
  Reader frozen() const;
  /// FNV-1a hash of every parameter entry; used to assert the reader is frozen.
  std::uint64_t checksum() const;

 private:
  ReaderConfig config_;
  ReaderParams params_;
  diff::Array positions_;
};

struct EncodedDocument {
  diff::Node keys;    // [L, d]
  diff::Node values;  // [L, d]
};

/// Keys and values of one document; depends on nothing but its tokens.
EncodedDocument encode_document(const Reader& reader, const data::Tokens& doc);

/// Banks of all documents, in order. Rows match encode_document exactly.
attn::TokenBank prefill(const Reader& reader, const std::vector<data::Tokens>& docs);

/// Same bank with keys and values cut from the graph, for a frozen reader.
attn::TokenBank detach(const attn::TokenBank& bank);

struct StepOutput {
  diff::Node probs;                    // [V]
  std::vector<diff::Node> attention;   // one table per hop, [T]
};

/// Output distribution for the next token after `prefix` (query tokens
/// followed by the answer tokens decoded so far).
StepOutput decode_step(const Reader& reader, const data::Tokens& prefix, const attn::TokenBank& bank,
                       const attn::MaskVector& mask);

/// Teacher-forced mean negative log-likelihood of the answer.
diff::Node language_loss(const Reader& reader, const data::Tokens& query, const data::Tokens& answer,
                         const attn::TokenBank& bank, const attn::MaskVector& mask);

/// log p(answer | query, masked documents), summed over answer tokens.
double answer_log_likelihood(const Reader& reader, const data::Tokens& query, const data::Tokens& answer,
                             const attn::TokenBank& bank, const attn::MaskVector& mask);

/// Greedy decoding of exactly max_len tokens; ties go to the lowest id.
data::Tokens generate(const Reader& reader, const data::Tokens& query, const attn::TokenBank& bank,
                      const attn::MaskVector& mask, std::size_t max_len);

void save(const Reader& reader, std::ostream& out);
void save(const Reader& reader, const std::filesystem::path& path);
Reader load_reader(std::istream& in);
Reader load_reader(const std::filesystem::path& path);

}  // namespace grerank::reader
