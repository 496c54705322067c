#pragma once

// Synthetic retrieval episodes built from (head SEP relation SEP tail) triples.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace grerank::data {

using Tokens = std::vector<std::size_t>;

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kSep = 1;

/// Disjoint id ranges: PAD, SEP, entities, relations, then answer tokens.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(64, 32, 8) {}
  /// Throws ContractError when size < 64 or the ranges leave no answer ids.
  Vocabulary(std::size_t size, std::size_t entities, std::size_t relations);

  std::size_t size() const noexcept { return size_; }
  std::size_t entities() const noexcept { return entities_; }
  std::size_t relations() const noexcept { return relations_; }
  std::size_t answers() const noexcept { return size_ - 2 - entities_ - relations_; }

  std::size_t entity(std::size_t i) const;
  std::size_t relation(std::size_t i) const;
  std::size_t answer(std::size_t i) const;

  bool is_entity(std::size_t t) const noexcept { return t >= 2 && t < 2 + entities_; }
  bool is_relation(std::size_t t) const noexcept { return t >= 2 + entities_ && t < 2 + entities_ + relations_; }
  bool is_answer(std::size_t t) const noexcept { return t >= 2 + entities_ + relations_ && t < size_; }

 private:
  std::size_t size_;
  std::size_t entities_;
  std::size_t relations_;
};

struct Episode {
  Tokens query;
  std::vector<Tokens> docs;
  Tokens answer;
  std::vector<std::size_t> gold;
  /// Gold documents that contain no answer token.
  std::vector<std::size_t> indirect;

  std::size_t size() const noexcept { return docs.size(); }
  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Checks index ranges, gold/indirect containment and indirectness.
void validate(const Episode& ep);

/// One entity-relation question with one gold triple and n-1 distractor
/// triples, shuffled. Requires n >= 2.
Episode gen_single_hop(std::uint64_t seed, std::size_t n, const Vocabulary& vocab);

/// A chain e0 -r1-> e1 -r2-> ... -> answer over chain_len gold documents plus
/// `decoys` decoy chains that reuse the same relations with other entities and
/// end in other answers. Relations are drawn from per-hop disjoint groups.
Episode gen_multihop(std::uint64_t seed, std::size_t n, std::size_t chain_len, const Vocabulary& vocab,
                     std::size_t decoys = 1);

enum class Task { kSingleHop, kMultiHop };

struct TaskSpec {
  Task task = Task::kSingleHop;
  std::size_t candidates = 20;
  std::size_t chain_len = 2;
  std::size_t decoys = 1;
  Vocabulary vocab;

  std::size_t max_query_len() const noexcept { return task == Task::kSingleHop ? 3 : 2 * chain_len + 1; }
  std::size_t max_doc_len() const noexcept { return 5; }
  std::size_t max_answer_len() const noexcept { return 1; }
};

/// Episode `index` of the stream identified by seed; generate_split returns the first `count`.
Episode generate(const TaskSpec& spec, std::uint64_t seed, std::size_t index);
std::vector<Episode> generate_split(const TaskSpec& spec, std::uint64_t seed, std::size_t count);

/// Follows the relation chain named by the query from its head entity through
/// the documents and returns the reached answer token, or nothing when the
/// chain breaks or branches.
std::vector<std::size_t> chase(const Episode& ep, const Vocabulary& vocab);

void write_corpus(const std::vector<Episode>& episodes, std::ostream& out);
void write_corpus(const std::vector<Episode>& episodes, const std::filesystem::path& path);
/// Throws ParseError carrying the 1-based line of the first malformed record.
std::vector<Episode> read_corpus(std::istream& in);
std::vector<Episode> read_corpus(const std::filesystem::path& path);

}  // namespace grerank::data
