#include "grerank/synthdata.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "grerank/error.hpp"
#include "grerank/rng.hpp"

namespace grerank::data {

Vocabulary::Vocabulary(std::size_t size, std::size_t entities, std::size_t relations)
    : size_(size), entities_(entities), relations_(relations) {
  if (size < 64) throw ContractError("vocabulary size must be at least 64");
  if (entities < 2 || relations < 2 || 2 + entities + relations >= size) {
    throw ContractError("vocabulary ranges leave no answer tokens");
  }
}

std::size_t Vocabulary::entity(std::size_t i) const {
  if (i >= entities_) throw ContractError("entity index out of range");
  return 2 + i;
}

std::size_t Vocabulary::relation(std::size_t i) const {
  if (i >= relations_) throw ContractError("relation index out of range");
  return 2 + entities_ + i;
}

std::size_t Vocabulary::answer(std::size_t i) const {
  if (i >= answers()) throw ContractError("answer index out of range");
  return 2 + entities_ + relations_ + i;
}

namespace {

Tokens triple(std::size_t head, std::size_t rel, std::size_t tail) { return {head, kSep, rel, kSep, tail}; }

bool mentions_any(const Tokens& doc, const Tokens& needles) {
  return std::any_of(doc.begin(), doc.end(),
                     [&](std::size_t t) { return std::find(needles.begin(), needles.end(), t) != needles.end(); });
}

// Draws `count` distinct values from [0, n).
std::vector<std::size_t> sample(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  for (std::size_t i = 0; i < count; ++i) std::swap(all[i], all[i + rng.below(n - i)]);
  all.resize(count);
  return all;
}

Episode shuffled(std::vector<Tokens> docs, Tokens query, Tokens answer, std::vector<std::size_t> gold,
                 std::vector<std::size_t> indirect, Rng& rng) {
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  std::vector<std::size_t> where(docs.size());
  Episode ep;
  ep.query = std::move(query);
  ep.answer = std::move(answer);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    ep.docs.push_back(std::move(docs[order[pos]]));
    where[order[pos]] = pos;
  }
  for (std::size_t g : gold) ep.gold.push_back(where[g]);
  for (std::size_t g : indirect) ep.indirect.push_back(where[g]);
  std::sort(ep.gold.begin(), ep.gold.end());
  std::sort(ep.indirect.begin(), ep.indirect.end());
  return ep;
}

}  // namespace

void validate(const Episode& ep) {
  if (ep.docs.empty()) throw ContractError("episode has no documents");
  if (ep.query.empty() || ep.answer.empty()) throw ContractError("episode query and answer must be nonempty");
  if (ep.gold.empty()) throw ContractError("episode has no gold document");
  for (std::size_t g : ep.gold) {
    if (g >= ep.docs.size()) throw ContractError("gold index " + std::to_string(g) + " out of range");
  }
  for (std::size_t i : ep.indirect) {
    if (std::find(ep.gold.begin(), ep.gold.end(), i) == ep.gold.end()) {
      throw ContractError("indirect document " + std::to_string(i) + " is not gold");
    }
    if (mentions_any(ep.docs[i], ep.answer)) {
      throw ContractError("indirect document " + std::to_string(i) + " contains an answer token");
    }
  }
  for (std::size_t i = 0; i < ep.docs.size(); ++i) {
    if (ep.docs[i].empty()) throw ContractError("document " + std::to_string(i) + " is empty");
  }
}

Episode gen_single_hop(std::uint64_t seed, std::size_t n, const Vocabulary& vocab) {
  if (n < 2) throw ContractError("single-hop episodes need n >= 2");
  if (n > vocab.entities() * vocab.relations()) throw ContractError("vocabulary too small for n distinct triples");
  Rng rng(seed);
  const std::size_t e = vocab.entity(rng.below(vocab.entities()));
  const std::size_t r = vocab.relation(rng.below(vocab.relations()));
  const std::size_t a = vocab.answer(rng.below(vocab.answers()));
  std::vector<Tokens> docs{triple(e, r, a)};
  std::set<std::pair<std::size_t, std::size_t>> used{{e, r}};
  while (docs.size() < n) {
    // Distractors often share the entity or the relation with the question.
    const double kind = rng.uniform();
    const std::size_t e2 = kind < 0.3 ? e : vocab.entity(rng.below(vocab.entities()));
    const std::size_t r2 = (kind >= 0.3 && kind < 0.6) ? r : vocab.relation(rng.below(vocab.relations()));
    const std::size_t a2 = vocab.answer(rng.below(vocab.answers()));
    if (a2 == a || used.count({e2, r2})) continue;
    used.insert({e2, r2});
    docs.push_back(triple(e2, r2, a2));
  }
  return shuffled(std::move(docs), {e, kSep, r}, {a}, {0}, {}, rng);
}

Episode gen_multihop(std::uint64_t seed, std::size_t n, std::size_t chain_len, const Vocabulary& vocab,
                     std::size_t decoys) {
  if (chain_len < 2) throw ContractError("multi-hop episodes need chain_len >= 2");
  const std::size_t chains = 1 + decoys;
  if (n < chain_len * chains + 1) {
    throw ContractError("n=" + std::to_string(n) + " too small for " + std::to_string(chains) + " chains of length " +
                        std::to_string(chain_len));
  }
  if (vocab.relations() < chain_len) throw ContractError("vocabulary has fewer relations than hops");
  if (vocab.entities() < chains * chain_len + 1 || vocab.answers() < chains + 1) {
    throw ContractError("vocabulary too small for the requested chains");
  }
  Rng rng(seed);
  const std::size_t group = vocab.relations() / chain_len;
  std::vector<std::size_t> rels(chain_len);
  for (std::size_t h = 0; h < chain_len; ++h) rels[h] = vocab.relation(h * group + rng.below(group));

  // chains * chain_len entities: chain c uses entities [c*chain_len, (c+1)*chain_len).
  const std::vector<std::size_t> ents = sample(rng, vocab.entities(), chains * chain_len);
  const std::vector<std::size_t> answers = sample(rng, vocab.answers(), chains);
  std::vector<Tokens> docs;
  for (std::size_t c = 0; c < chains; ++c) {
    for (std::size_t h = 0; h < chain_len; ++h) {
      const std::size_t head = vocab.entity(ents[c * chain_len + h]);
      const std::size_t tail =
          h + 1 < chain_len ? vocab.entity(ents[c * chain_len + h + 1]) : vocab.answer(answers[c]);
      docs.push_back(triple(head, rels[h], tail));
    }
  }
  const std::size_t true_answer = vocab.answer(answers[0]);
  std::set<std::size_t> gold_heads;
  for (std::size_t h = 0; h < chain_len; ++h) gold_heads.insert(vocab.entity(ents[h]));
  while (docs.size() < n) {
    const std::size_t head = vocab.entity(rng.below(vocab.entities()));
    if (gold_heads.count(head)) continue;
    const std::size_t rel = vocab.relation(rng.below(vocab.relations()));
    std::size_t tail;
    if (rng.uniform() < 0.5) {
      tail = vocab.entity(rng.below(vocab.entities()));
    } else {
      tail = vocab.answer(rng.below(vocab.answers()));
      if (tail == true_answer) continue;
    }
    docs.push_back(triple(head, rel, tail));
  }

  Tokens query{vocab.entity(ents[0])};
  for (std::size_t r : rels) {
    query.push_back(kSep);
    query.push_back(r);
  }
  std::vector<std::size_t> gold(chain_len), indirect(chain_len - 1);
  for (std::size_t h = 0; h < chain_len; ++h) gold[h] = h;
  for (std::size_t h = 0; h + 1 < chain_len; ++h) indirect[h] = h;
  return shuffled(std::move(docs), std::move(query), {true_answer}, std::move(gold), std::move(indirect), rng);
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Episode generate(const TaskSpec& spec, std::uint64_t seed, std::size_t index) {
  const std::uint64_t s = mix(seed, index);
  return spec.task == Task::kSingleHop ? gen_single_hop(s, spec.candidates, spec.vocab)
                                       : gen_multihop(s, spec.candidates, spec.chain_len, spec.vocab, spec.decoys);
}

std::vector<Episode> generate_split(const TaskSpec& spec, std::uint64_t seed, std::size_t count) {
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(spec, seed, i));
  return out;
}

std::vector<std::size_t> chase(const Episode& ep, const Vocabulary& vocab) {
  if (ep.query.empty()) return {};
  std::size_t current = ep.query[0];
  for (std::size_t q = 2; q < ep.query.size(); q += 2) {
    const std::size_t rel = ep.query[q];
    std::vector<std::size_t> next;
    for (const Tokens& d : ep.docs) {
      if (d.size() == 5 && d[0] == current && d[2] == rel) next.push_back(d[4]);
    }
    if (next.size() != 1) return {};
    current = next[0];
  }
  if (!vocab.is_answer(current)) return {};
  return {current};
}

namespace {

using Json = nlohmann::ordered_json;

Json to_json(const Episode& ep) {
  Json j;
  j["query"] = ep.query;
  j["docs"] = ep.docs;
  j["answer"] = ep.answer;
  j["gold"] = ep.gold;
  j["indirect"] = ep.indirect;
  return j;
}

Episode from_json(const Json& j) {
  if (!j.is_object()) throw ContractError("record is not a JSON object");
  for (const char* key : {"query", "docs", "answer", "gold", "indirect"}) {
    if (!j.contains(key)) throw ContractError(std::string("missing field '") + key + "'");
  }
  Episode ep;
  ep.query = j.at("query").get<Tokens>();
  ep.docs = j.at("docs").get<std::vector<Tokens>>();
  ep.answer = j.at("answer").get<Tokens>();
  ep.gold = j.at("gold").get<std::vector<std::size_t>>();
  ep.indirect = j.at("indirect").get<std::vector<std::size_t>>();
  validate(ep);
  return ep;
}

}  // namespace

void write_corpus(const std::vector<Episode>& episodes, std::ostream& out) {
  for (const Episode& ep : episodes) out << to_json(ep).dump() << '\n';
}

void write_corpus(const std::vector<Episode>& episodes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_corpus(episodes, out);
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
}

std::vector<Episode> read_corpus(std::istream& in) {
  std::vector<Episode> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json(Json::parse(line)));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), number);
    }
  }
  return out;
}

std::vector<Episode> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_corpus(in);
}

}  // namespace grerank::data
