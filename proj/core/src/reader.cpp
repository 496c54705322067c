#include "grerank/reader.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "grerank/error.hpp"
#include "grerank/rng.hpp"
#include "grerank/serialize.hpp"

namespace grerank::reader {

using diff::Array;
using diff::Node;
using diff::Shape;

void ReaderConfig::validate() const {
  if (vocab_size < 2) throw ContractError("reader vocab_size must be at least 2");
  if (embed_dim == 0 || embed_dim % 2 != 0) throw ContractError("reader embed_dim must be positive and even");
  if (max_doc_len == 0 || max_query_len == 0 || max_answer_len == 0) {
    throw ContractError("reader length limits must be positive");
  }
  if (window == 0) throw ContractError("reader window must be positive");
  if (hops == 0) throw ContractError("reader needs at least one hop");
  if (!(copy_init >= 0.0 && copy_init <= kMaxCopyWeight)) throw ContractError("copy_init outside [0, 0.999]");
}

std::size_t ReaderConfig::position_count() const noexcept {
  return std::max(max_doc_len, max_query_len + max_answer_len);
}

std::vector<Node> ReaderParams::all() const {
  std::vector<Node> out{embed};
  out.insert(out.end(), key_proj.begin(), key_proj.end());
  out.insert(out.end(), query_proj.begin(), query_proj.end());
  out.insert(out.end(), hop_proj.begin(), hop_proj.end());
  out.push_back(out_proj);
  out.push_back(copy_weight);
  return out;
}

namespace {

Array sinusoid(std::size_t count, std::size_t d) {
  Array p(Shape{count, d});
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double f = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      p.at(t, 2 * i) = std::sin(static_cast<double>(t) * f);
      p.at(t, 2 * i + 1) = std::cos(static_cast<double>(t) * f);
    }
  }
  return p;
}

Array gaussian(Shape shape, double stddev, Rng& rng) {
  Array a(std::move(shape));
  for (double& x : a.values()) x = stddev * rng.normal();
  return a;
}

// Identity plus a small perturbation.
Array near_identity(std::size_t d, Rng& rng) {
  Array a = gaussian(Shape{d, d}, 0.1 / std::sqrt(static_cast<double>(d)), rng);
  for (std::size_t i = 0; i < d; ++i) a.at(i, i) += 1.0;
  return a;
}

void check_tokens(const data::Tokens& tokens, std::size_t vocab, const char* what) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= vocab) throw DomainError(std::string(what) + " token out of vocabulary", i);
  }
}

}  // namespace

Reader::Reader(ReaderConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim, v = config_.vocab_size;
  Rng rng(config_.seed);
  params_.embed = diff::parameter(gaussian(Shape{v, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  for (std::size_t j = 0; j < config_.window; ++j) params_.key_proj.push_back(diff::parameter(near_identity(d, rng)));
  for (std::size_t h = 0; h < config_.hops; ++h) params_.query_proj.push_back(diff::parameter(near_identity(d, rng)));
  for (std::size_t h = 0; h + 1 < config_.hops; ++h) params_.hop_proj.push_back(diff::parameter(near_identity(d, rng)));
  params_.out_proj = diff::parameter(Array(Shape{d, v}, 0.0));
  params_.copy_weight = diff::parameter(Array(Shape{1}, config_.copy_init));
  positions_ = sinusoid(config_.position_count(), d);
}

Reader::Reader(ReaderConfig config, ReaderParams params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const std::size_t d = config_.embed_dim, v = config_.vocab_size;
  auto expect = [](const Node& n, const Shape& s, const char* what) {
    if (!n.valid() || n.shape() != s) throw ContractError(std::string("reader parameter '") + what + "' has wrong shape");
  };
  expect(params_.embed, {v, d}, "embed");
  if (params_.key_proj.size() != config_.window || params_.query_proj.size() != config_.hops ||
      params_.hop_proj.size() + 1 != config_.hops) {
    throw ContractError("reader projection counts do not match config");
  }
  for (const Node& n : params_.key_proj) expect(n, {d, d}, "key_proj");
  for (const Node& n : params_.query_proj) expect(n, {d, d}, "query_proj");
  for (const Node& n : params_.hop_proj) expect(n, {d, d}, "hop_proj");
  expect(params_.out_proj, {d, v}, "out_proj");
  expect(params_.copy_weight, {1}, "copy_weight");
  positions_ = sinusoid(config_.position_count(), d);
}

void Reader::project() {
  double& c = params_.copy_weight.mutable_value()[0];
  c = std::clamp(c, 0.0, kMaxCopyWeight);
}

Reader Reader::frozen() const {
  ReaderParams p;
  auto copy = [](const Node& n) { return diff::constant(n.value()); };
  p.embed = copy(params_.embed);
  for (const Node& n : params_.key_proj) p.key_proj.push_back(copy(n));
  for (const Node& n : params_.query_proj) p.query_proj.push_back(copy(n));
  for (const Node& n : params_.hop_proj) p.hop_proj.push_back(copy(n));
  p.out_proj = copy(params_.out_proj);
  p.copy_weight = copy(params_.copy_weight);
  return Reader(config_, std::move(p));
}

std::uint64_t Reader::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Node& n : params_.all()) {
    for (double x : n.value().values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

namespace {

// Keys for rows laid out as consecutive documents. shift[j][r] is the row
// j positions earlier in the same document, or -1 past the document start.
EncodedDocument encode_rows(const Reader& reader, const std::vector<data::Tokens>& docs) {
  const ReaderConfig& cfg = reader.config();
  std::vector<std::ptrdiff_t> ids;
  std::vector<double> pos;
  std::vector<std::vector<std::ptrdiff_t>> shift(cfg.window);
  std::size_t row = 0;
  for (const data::Tokens& doc : docs) {
    if (doc.empty()) throw ContractError("cannot encode an empty document");
    if (doc.size() > cfg.max_doc_len) {
      throw ContractError("document length " + std::to_string(doc.size()) + " exceeds max_doc_len " +
                          std::to_string(cfg.max_doc_len));
    }
    check_tokens(doc, cfg.vocab_size, "document");
    for (std::size_t t = 0; t < doc.size(); ++t) {
      ids.push_back(static_cast<std::ptrdiff_t>(doc[t]));
      const auto p = reader.positions().values().subspan(t * cfg.embed_dim, cfg.embed_dim);
      pos.insert(pos.end(), p.begin(), p.end());
      for (std::size_t j = 0; j < cfg.window; ++j) {
        shift[j].push_back(t >= j ? static_cast<std::ptrdiff_t>(row + t - j) : -1);
      }
    }
    row += doc.size();
  }
  const ReaderParams& p = reader.params();
  Node emb = diff::gather_rows(p.embed, ids);
  Node x = diff::add(emb, diff::constant(Array(Shape{row, cfg.embed_dim}, std::move(pos))));
  Node keys;
  for (std::size_t j = 0; j < cfg.window; ++j) {
    Node term = diff::matmul(j == 0 ? x : diff::gather_rows(x, shift[j]), p.key_proj[j]);
    keys = j == 0 ? term : diff::add(keys, term);
  }
  return {keys, emb};
}

Node mean_rows(const Node& rows) { return diff::mean(rows, 0); }

}  // namespace

EncodedDocument encode_document(const Reader& reader, const data::Tokens& doc) {
  return encode_rows(reader, {doc});
}

attn::TokenBank prefill(const Reader& reader, const std::vector<data::Tokens>& docs) {
  if (docs.empty()) throw ContractError("prefill: empty candidate set");
  EncodedDocument enc = encode_rows(reader, docs);
  std::vector<std::size_t> lengths, ids;
  for (const data::Tokens& d : docs) {
    lengths.push_back(d.size());
    ids.insert(ids.end(), d.begin(), d.end());
  }
  return attn::TokenBank(enc.keys, enc.values, std::move(lengths), std::move(ids));
}

attn::TokenBank detach(const attn::TokenBank& bank) {
  return attn::TokenBank(diff::constant(bank.keys().value()), diff::constant(bank.values().value()),
                         bank.doc_lengths(), bank.token_ids());
}

StepOutput decode_step(const Reader& reader, const data::Tokens& prefix, const attn::TokenBank& bank,
                       const attn::MaskVector& mask) {
  const ReaderConfig& cfg = reader.config();
  const ReaderParams& p = reader.params();
  if (prefix.empty()) throw ContractError("decode_step: empty prefix");
  if (prefix.size() > cfg.position_count()) throw ContractError("decode_step: prefix longer than position table");
  check_tokens(prefix, cfg.vocab_size, "prefix");
  if (bank.token_ids().size() != bank.tokens()) throw ContractError("decode_step: bank lacks token ids");
  if (mask.size() != bank.docs()) throw ContractError("decode_step: mask length does not match document count");

  std::vector<std::ptrdiff_t> ids(prefix.begin(), prefix.end());
  const auto pos = reader.positions().values().first(prefix.size() * cfg.embed_dim);
  Node x = diff::add(diff::gather_rows(p.embed, ids),
                     diff::constant(Array(Shape{prefix.size(), cfg.embed_dim}, {pos.begin(), pos.end()})));
  const Node h0 = mean_rows(x);

  StepOutput out;
  Node h = h0;
  for (std::size_t hop = 0; hop < cfg.hops; ++hop) {
    Node probs = attn::attention(diff::matmul(h, p.query_proj[hop]), bank, mask);
    out.attention.push_back(probs);
    if (hop + 1 < cfg.hops) h = diff::add(h, diff::matmul(attn::attend(probs, bank), p.hop_proj[hop]));
  }
  // The vocabulary head sees only the query and prefix.
  Node vocab_head = diff::softmax(diff::matmul(h0, p.out_proj), 0);
  Node copy = diff::index_add(out.attention.back(), bank.token_ids(), cfg.vocab_size);
  Node keep = diff::sub(diff::constant(Array(Shape{1}, 1.0)), p.copy_weight);
  out.probs = diff::add(diff::mul(vocab_head, keep), diff::mul(copy, p.copy_weight));
  return out;
}

Node language_loss(const Reader& reader, const data::Tokens& query, const data::Tokens& answer,
                   const attn::TokenBank& bank, const attn::MaskVector& mask) {
  if (answer.empty()) throw ContractError("language_loss: empty answer");
  if (answer.size() > reader.config().max_answer_len) throw ContractError("language_loss: answer too long");
  check_tokens(answer, reader.config().vocab_size, "answer");
  data::Tokens prefix = query;
  Node total;
  for (std::size_t s = 0; s < answer.size(); ++s) {
    StepOutput step = decode_step(reader, prefix, bank, mask);
    const std::size_t y = answer[s];
    Node nll = diff::neg(diff::log(diff::take(step.probs, std::span<const std::size_t>(&y, 1))));
    total = s == 0 ? nll : diff::add(total, nll);
    prefix.push_back(y);
  }
  return diff::reshape(diff::scale(total, 1.0 / static_cast<double>(answer.size())), Shape{});
}

double answer_log_likelihood(const Reader& reader, const data::Tokens& query, const data::Tokens& answer,
                             const attn::TokenBank& bank, const attn::MaskVector& mask) {
  return -language_loss(reader, query, answer, bank, mask).item() * static_cast<double>(answer.size());
}

data::Tokens generate(const Reader& reader, const data::Tokens& query, const attn::TokenBank& bank,
                      const attn::MaskVector& mask, std::size_t max_len) {
  if (max_len == 0) throw ContractError("generate: max_len must be at least 1");
  data::Tokens prefix = query, out;
  for (std::size_t s = 0; s < max_len; ++s) {
    const StepOutput step = decode_step(reader, prefix, bank, mask);
    const auto probs = step.probs.value().values();
    const std::size_t best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

namespace {

constexpr io::Magic kMagic{'G', 'R', 'R', 'E', 'A', 'D', 'E', 'R'};
constexpr std::int64_t kVersion = 1;

}  // namespace

void save(const Reader& reader, std::ostream& out) {
  const ReaderConfig& c = reader.config();
  io::ParamBlob blob;
  blob.version = kVersion;
  blob.header = {static_cast<std::int64_t>(c.vocab_size),    static_cast<std::int64_t>(c.embed_dim),
                 static_cast<std::int64_t>(c.max_doc_len),   static_cast<std::int64_t>(c.max_query_len),
                 static_cast<std::int64_t>(c.max_answer_len), static_cast<std::int64_t>(c.window),
                 static_cast<std::int64_t>(c.hops),          static_cast<std::int64_t>(c.seed)};
  for (const Node& n : reader.params().all()) blob.arrays.push_back(n.value());
  io::write_blob(out, kMagic, blob);
}

void save(const Reader& reader, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save(reader, out);
}

Reader load_reader(std::istream& in) {
  ReaderConfig c;
  io::ParamBlob blob = io::read_blob(in, kMagic, kVersion, 8, [&](const std::vector<std::int64_t>& h) {
    for (std::int64_t x : h) {
      if (x < 0) throw ParseError("negative reader header field", 0);
    }
    c.vocab_size = static_cast<std::size_t>(h[0]);
    c.embed_dim = static_cast<std::size_t>(h[1]);
    c.max_doc_len = static_cast<std::size_t>(h[2]);
    c.max_query_len = static_cast<std::size_t>(h[3]);
    c.max_answer_len = static_cast<std::size_t>(h[4]);
    c.window = static_cast<std::size_t>(h[5]);
    c.hops = static_cast<std::size_t>(h[6]);
    c.seed = static_cast<std::uint64_t>(h[7]);
    c.validate();
    const std::size_t d = c.embed_dim;
    std::vector<Shape> shapes{{c.vocab_size, d}};
    for (std::size_t i = 0; i < c.window + c.hops + c.hops - 1; ++i) shapes.push_back({d, d});
    shapes.push_back({d, c.vocab_size});
    shapes.push_back({1});
    return shapes;
  });
  ReaderParams p;
  std::size_t at = 0;
  p.embed = diff::parameter(std::move(blob.arrays[at++]));
  for (std::size_t j = 0; j < c.window; ++j) p.key_proj.push_back(diff::parameter(std::move(blob.arrays[at++])));
  for (std::size_t h = 0; h < c.hops; ++h) p.query_proj.push_back(diff::parameter(std::move(blob.arrays[at++])));
  for (std::size_t h = 0; h + 1 < c.hops; ++h) p.hop_proj.push_back(diff::parameter(std::move(blob.arrays[at++])));
  p.out_proj = diff::parameter(std::move(blob.arrays[at++]));
  p.copy_weight = diff::parameter(std::move(blob.arrays[at++]));
  c.copy_init = p.copy_weight.value()[0];
  return Reader(c, std::move(p));
}

Reader load_reader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_reader(in);
}

}  // namespace grerank::reader
