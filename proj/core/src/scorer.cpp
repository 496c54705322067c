#include "grerank/scorer.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "grerank/error.hpp"
#include "grerank/serialize.hpp"

namespace grerank::scorer {

using diff::Array;
using diff::Node;
using diff::Shape;

void ScorerConfig::validate() const {
  if (vocab_size == 0 || embed_dim == 0 || hidden == 0) throw ContractError("scorer sizes must be positive");
}

namespace {

Array gaussian(Shape shape, double stddev, Rng& rng) {
  Array a(std::move(shape));
  for (double& x : a.values()) x = stddev * rng.normal();
  return a;
}

std::vector<Shape> shapes(const ScorerConfig& c) {
  return {{c.vocab_size, c.embed_dim}, {3 * c.embed_dim, c.hidden}, {1, c.hidden}, {c.hidden, 1}, {1}};
}

}  // namespace

MlpScorer::MlpScorer(ScorerConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const double d = static_cast<double>(config_.embed_dim), h = static_cast<double>(config_.hidden);
  params_.push_back(diff::parameter(gaussian({config_.vocab_size, config_.embed_dim}, 2.0 / std::sqrt(d), rng)));
  params_.push_back(diff::parameter(gaussian({3 * config_.embed_dim, config_.hidden}, 1.0 / std::sqrt(3 * d), rng)));
  params_.push_back(diff::parameter(Array(Shape{1, config_.hidden}, 0.0)));
  params_.push_back(diff::parameter(gaussian({config_.hidden, 1}, 0.1 / std::sqrt(h), rng)));
  params_.push_back(diff::parameter(Array(Shape{1}, 0.0)));
}

MlpScorer::MlpScorer(ScorerConfig config, std::vector<Node> params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const std::vector<Shape> expect = shapes(config_);
  if (params_.size() != expect.size()) throw ContractError("scorer expects 5 parameter arrays");
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (params_[i].shape() != expect[i]) throw ContractError("scorer parameter " + std::to_string(i) + " has wrong shape");
  }
}

namespace {

std::vector<std::ptrdiff_t> checked_ids(const data::Tokens& t, std::size_t vocab, const char* what) {
  if (t.empty()) throw ContractError(std::string("scorer: empty ") + what);
  std::vector<std::ptrdiff_t> ids;
  ids.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] >= vocab) throw DomainError(std::string("scorer: ") + what + " token out of vocabulary", i);
    ids.push_back(static_cast<std::ptrdiff_t>(t[i]));
  }
  return ids;
}

// Mean embedding of each token sequence, one row per sequence: [count, d].
Node pooled(const MlpScorer& s, const std::vector<data::Tokens>& seqs, const char* what) {
  std::vector<std::ptrdiff_t> ids;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto part = checked_ids(seqs[i], s.config().vocab_size, what);
    ids.insert(ids.end(), part.begin(), part.end());
    rows.insert(rows.end(), part.size(), i);
  }
  // Averaging matrix [count, tokens] times the gathered embeddings.
  const std::size_t count = seqs.size(), total = ids.size();
  Array avg(Shape{count, total}, 0.0);
  for (std::size_t t = 0; t < total; ++t) avg.at(rows[t], t) = 1.0 / static_cast<double>(seqs[rows[t]].size());
  return diff::matmul(diff::constant(std::move(avg)), diff::gather_rows(s.embed(), ids));
}

Node repeat_row(const Node& row, std::size_t n) {
  const std::vector<std::ptrdiff_t> zeros(n, 0);
  return diff::gather_rows(row, zeros);
}

Node scores_node(const MlpScorer& s, const data::Tokens& query, const std::vector<data::Tokens>& docs) {
  if (docs.empty()) throw ContractError("scorer: no documents");
  const std::size_t n = docs.size();
  Node q = repeat_row(pooled(s, {query}, "query"), n);
  Node d = pooled(s, docs, "document");
  Node features = diff::concat({q, d, diff::mul(q, d)}, 1);
  Node hidden = diff::tanh(diff::add(diff::matmul(features, s.w1()), repeat_row(s.b1(), n)));
  Node out = diff::matmul(hidden, s.w2());
  return diff::add(diff::reshape(out, Shape{n}), s.b2());
}

}  // namespace

Node score(const MlpScorer& s, const data::Tokens& query, const data::Tokens& doc) {
  return diff::reshape(scores_node(s, query, {doc}), Shape{});
}

mask::ScoreVector score_all(const MlpScorer& s, const data::Tokens& query, const std::vector<data::Tokens>& docs) {
  return mask::ScoreVector(scores_node(s, query, docs));
}

mask::ScoreVector score_all(const MlpScorer& s, const data::Episode& ep) { return score_all(s, ep.query, ep.docs); }

FreeWeights::FreeWeights(std::size_t n) : w_(diff::parameter(Array(Shape{n}, 0.0))) {
  if (n == 0) throw ContractError("FreeWeights: empty episode");
}

mask::RelaxedMask free_weights_mask(const FreeWeights& fw, const mask::GumbelParams& p, Rng& rng) {
  return mask::relaxed_topk(fw.scores(), p, rng);
}

namespace {

constexpr io::Magic kMagic{'G', 'R', 'S', 'C', 'O', 'R', 'E', 'R'};
constexpr std::int64_t kVersion = 1;

}  // namespace

void save(const MlpScorer& s, std::ostream& out) {
  const ScorerConfig& c = s.config();
  io::ParamBlob blob;
  blob.version = kVersion;
  blob.header = {static_cast<std::int64_t>(c.vocab_size), static_cast<std::int64_t>(c.embed_dim),
                 static_cast<std::int64_t>(c.hidden), static_cast<std::int64_t>(c.seed)};
  for (const Node& n : s.params()) blob.arrays.push_back(n.value());
  io::write_blob(out, kMagic, blob);
}

void save(const MlpScorer& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save(s, out);
}

MlpScorer load_scorer(std::istream& in) {
  ScorerConfig c;
  io::ParamBlob blob = io::read_blob(in, kMagic, kVersion, 4, [&](const std::vector<std::int64_t>& h) {
    for (std::int64_t x : h) {
      if (x < 0) throw ParseError("negative scorer header field", 0);
    }
    c.vocab_size = static_cast<std::size_t>(h[0]);
    c.embed_dim = static_cast<std::size_t>(h[1]);
    c.hidden = static_cast<std::size_t>(h[2]);
    c.seed = static_cast<std::uint64_t>(h[3]);
    c.validate();
    return shapes(c);
  });
  std::vector<Node> params;
  for (Array& a : blob.arrays) params.push_back(diff::parameter(std::move(a)));
  return MlpScorer(c, std::move(params));
}

MlpScorer load_scorer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_scorer(in);
}

}  // namespace grerank::scorer
