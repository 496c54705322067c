// Acceptance criteria A1-A10. Prints one PASS/FAIL line per criterion.
// Exit status is zero when the failing set equals the --expect-red set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grerank/attention.hpp"
#include "grerank/config.hpp"
#include "grerank/diff.hpp"
#include "grerank/gradcheck.hpp"
#include "grerank/objectives.hpp"
#include "grerank/reader.hpp"
#include "grerank/rng.hpp"
#include "grerank/scorer.hpp"
#include "grerank/subset_mask.hpp"
#include "grerank/synthdata.hpp"
#include "grerank/trainer.hpp"

namespace a = grerank::attn;
namespace d = grerank::diff;
namespace m = grerank::mask;
namespace o = grerank::obj;
namespace r = grerank::reader;
namespace s = grerank::scorer;
namespace t = grerank::train;
namespace data = grerank::data;
using d::Array;
using d::Node;
using grerank::Rng;
using grerank::config::ExperimentConfig;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Array random_array(d::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Array x(std::move(shape));
  for (double& v : x.values()) v = lo + (hi - lo) * rng.uniform();
  return x;
}

Node probe(const Node& y) {
  Array w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7) - 0.05 * i;
  return d::sum(d::mul(y, d::constant(w)));
}

r::Reader pretrained(const ExperimentConfig& c) {
  r::Reader reader(c.reader());
  t::pretrain(reader, c.task(), c.pretrain());
  return reader.frozen();
}

r::Reader perturbed_reader(r::ReaderConfig c, std::uint64_t seed) {
  r::Reader reader(c);
  Rng rng(seed);
  for (Node& p : reader.params().all()) {
    for (double& x : p.mutable_value().values()) x += 0.3 * rng.normal();
  }
  reader.project();
  return reader.frozen();
}

// A1 -----------------------------------------------------------------------

struct GradSuite {
  double worst = 0.0;
  double worst_abs = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  std::size_t entries = 0;

  void run(const std::string& name, const std::function<Node(std::span<const Node>)>& f, std::vector<Array> in) {
    const auto res = d::check_gradient(f, std::move(in));
    ++checks;
    entries += res.entries;
    worst_abs = std::max(worst_abs, res.max_abs_error);
    if (res.max_rel_error >= worst) {
      worst = res.max_rel_error;
      worst_name = name;
    }
  }
};

Outcome a1() {
  Rng rng(101);
  GradSuite ops, topk;
  using Span = std::span<const Node>;
  const auto mat = [&](std::size_t rows, std::size_t cols) { return random_array({rows, cols}, rng); };
  const auto pos = [&](std::size_t rows, std::size_t cols) { return random_array({rows, cols}, rng, 0.5, 2.0); };

  ops.run("add", [](Span p) { return probe(d::add(p[0], p[1])); }, {mat(2, 3), mat(2, 3)});
  ops.run("sub", [](Span p) { return probe(d::sub(p[0], p[1])); }, {mat(2, 3), mat(2, 3)});
  ops.run("mul", [](Span p) { return probe(d::mul(p[0], p[1])); }, {mat(2, 3), mat(2, 3)});
  ops.run("mul_broadcast", [](Span p) { return probe(d::mul(p[0], p[1])); }, {mat(2, 3), mat(1, 1)});
  ops.run("divide", [](Span p) { return probe(d::divide(p[0], p[1])); }, {mat(2, 3), pos(2, 3)});
  ops.run("scale", [](Span p) { return probe(d::scale(p[0], -1.7)); }, {mat(2, 3)});
  ops.run("add_scalar", [](Span p) { return probe(d::add_scalar(p[0], 0.4)); }, {mat(2, 3)});
  ops.run("neg", [](Span p) { return probe(d::neg(p[0])); }, {mat(2, 3)});
  ops.run("exp", [](Span p) { return probe(d::exp(p[0])); }, {mat(2, 3)});
  ops.run("log", [](Span p) { return probe(d::log(p[0])); }, {pos(2, 3)});
  ops.run("tanh", [](Span p) { return probe(d::tanh(p[0])); }, {mat(2, 3)});
  ops.run("sigmoid", [](Span p) { return probe(d::sigmoid(p[0])); }, {mat(2, 3)});
  ops.run("sqrt", [](Span p) { return probe(d::sqrt(p[0])); }, {pos(2, 3)});
  ops.run("matmul", [](Span p) { return probe(d::matmul(p[0], p[1])); }, {mat(2, 3), mat(3, 4)});
  ops.run("matmul_row", [](Span p) { return probe(d::matmul(p[0], p[1])); },
          {random_array({3}, rng), mat(3, 4)});
  ops.run("matmul_col", [](Span p) { return probe(d::matmul(p[0], p[1])); },
          {mat(2, 3), random_array({3}, rng)});
  ops.run("transpose", [](Span p) { return probe(d::transpose(p[0])); }, {mat(2, 3)});
  ops.run("sum_axis0", [](Span p) { return probe(d::sum(p[0], 0)); }, {mat(3, 4)});
  ops.run("sum_axis1", [](Span p) { return probe(d::sum(p[0], 1)); }, {mat(3, 4)});
  ops.run("sum", [](Span p) { return d::sum(d::mul(p[0], p[0])); }, {mat(3, 4)});
  ops.run("mean", [](Span p) { return d::mean(d::mul(p[0], p[0])); }, {mat(3, 4)});
  ops.run("mean_axis", [](Span p) { return probe(d::mean(p[0], 1)); }, {mat(3, 4)});
  ops.run("max", [](Span p) { return d::max(p[0]); }, {mat(3, 4)});
  ops.run("softmax_axis0", [](Span p) { return probe(d::softmax(p[0], 0)); }, {mat(3, 4)});
  ops.run("softmax_axis1", [](Span p) { return probe(d::softmax(p[0], 1)); }, {mat(3, 4)});
  ops.run("log_softmax", [](Span p) { return probe(d::log_softmax(p[0], 1)); }, {mat(3, 4)});
  ops.run("logsumexp", [](Span p) { return d::logsumexp(p[0]); }, {mat(3, 4)});
  ops.run("max_elementwise", [](Span p) { return probe(d::max_elementwise({p[0], p[1], p[2]})); },
          {mat(2, 5), mat(2, 5), mat(2, 5)});
  ops.run("reshape", [](Span p) { return probe(d::reshape(p[0], {4, 3})); }, {mat(3, 4)});
  ops.run("concat0", [](Span p) { return probe(d::concat({p[0], p[1]}, 0)); }, {mat(2, 3), mat(1, 3)});
  ops.run("concat1", [](Span p) { return probe(d::concat({p[0], p[1]}, 1)); }, {mat(2, 3), mat(2, 2)});
  ops.run("gather_rows",
          [](Span p) {
            const std::vector<std::ptrdiff_t> rows{2, 0, -1, 2};
            return probe(d::gather_rows(p[0], rows));
          },
          {mat(3, 4)});
  ops.run("take",
          [](Span p) {
            const std::vector<std::size_t> idx{5, 0, 5, 11, 3};
            return probe(d::take(p[0], idx));
          },
          {mat(3, 4)});
  ops.run("index_add",
          [](Span p) {
            const std::vector<std::size_t> idx{2, 0, 2, 1, 3};
            return probe(d::index_add(p[0], idx, 4));
          },
          {random_array({5}, rng)});
  ops.run("slice_rows", [](Span p) { return probe(d::slice(p[0], 1, 3)); }, {mat(4, 3)});
  ops.run("slice_vector", [](Span p) { return probe(d::slice(p[0], 2, 5)); }, {random_array({6}, rng)});

  const std::vector<std::size_t> lengths{2, 3, 1};
  ops.run("attention",
          [&](Span p) { return probe(a::attention(p[0], a::TokenBank(p[1], p[2], lengths))); },
          {random_array({4}, rng), mat(6, 4), mat(6, 3)});
  ops.run("masked_attention",
          [&](Span p) {
            return probe(a::masked_attention(p[0], a::TokenBank(p[1], p[2], lengths), a::MaskVector::hard({1, 0, 1})));
          },
          {random_array({4}, rng), mat(6, 4), mat(6, 3)});
  ops.run("dma",
          [&](Span p) {
            return probe(a::dma(p[0], a::TokenBank(p[1], p[2], lengths), a::MaskVector::soft(p[3])));
          },
          {random_array({4}, rng), mat(6, 4), mat(6, 3), random_array({3}, rng, 0.05, 1.0)});
  ops.run("weighted_softmax",
          [](Span p) { return probe(a::weighted_softmax(p[0], {0, 0, 1, 1, 1, 2}, p[1])); },
          {random_array({6}, rng), random_array({3}, rng, 0.05, 1.0)});
  ops.run("attend",
          [&](Span p) {
            const a::TokenBank bank(d::constant(mat(6, 4)), p[1], lengths);
            return probe(a::attend(d::softmax(p[0], 0), bank));
          },
          {random_array({6}, rng), mat(6, 3)});
  const Array g5 = m::gumbel_noise(5, rng);
  ops.run("perturb", [&](Span p) { return probe(m::perturb(p[0], g5, 1.3)); }, {random_array({5}, rng)});
  ops.run("relaxed_onehot", [](Span p) { return probe(m::relaxed_onehot(p[0], 0.5)); }, {random_array({5}, rng)});

  {
    r::ReaderConfig c;
    c.embed_dim = 4;
    c.window = 2;
    c.hops = 2;
    c.max_query_len = 3;
    const auto reader = perturbed_reader(c, 7);
    const std::vector<data::Tokens> docs{{3, 1, 40, 1, 50}, {12, 1, 34, 1, 51}, {5, 1, 36, 1, 52}};
    const data::Tokens query{3, 1, 40};
    std::vector<Array> values;
    for (const Node& n : reader.params().all()) values.push_back(n.value());
    ops.run("language_loss_params",
            [&](Span p) {
              const r::ReaderParams params{p[0], {p[1], p[2]}, {p[3], p[4]}, {p[5]}, p[6], p[7]};
              const r::Reader rd(c, params);
              return r::language_loss(rd, query, {50}, r::prefill(rd, docs),
                                      a::MaskVector::soft(d::constant(Array::vector({0.7, 0.4, 0.2}))));
            },
            values);
    const auto bank = r::prefill(reader, docs);
    ops.run("language_loss_mask",
            [&](Span p) { return r::language_loss(reader, query, {50}, bank, a::MaskVector::soft(p[0])); },
            {Array::vector({0.9, 0.3, 0.6})});
  }

  const std::vector<double> ll{-0.5, -1.5, -3.0, -0.2, -2.2};
  const o::AttentionStats stats{{0.3, 0.1, 0.3, 0.2, 0.1}, {1.1, 0.7, 1.4, 0.9, 1.2}};
  const Array w0 = random_array({5}, rng);
  ops.run("adist", [&](Span p) { return o::adist_loss(m::ScoreVector(p[0]), stats); }, {w0});
  ops.run("emdr", [&](Span p) { return o::emdr_loss(m::ScoreVector(p[0]), ll); }, {w0});
  ops.run("pdist", [&](Span p) { return o::pdist_loss(m::ScoreVector(p[0]), ll); }, {w0});
  ops.run("loop", [&](Span p) { return o::loop_loss(m::ScoreVector(p[0]), ll); }, {w0});

  s::ScorerConfig sc;
  sc.embed_dim = 6;
  sc.hidden = 5;
  sc.seed = 4;
  const s::MlpScorer scorer(sc);
  std::vector<Array> scorer_values;
  for (const Node& q : scorer.params()) scorer_values.push_back(q.value());
  const auto ep = data::gen_single_hop(6, 5, data::Vocabulary());
  ops.run("scorer_pdist",
          [&](Span p) {
            const s::MlpScorer local(sc, std::vector<Node>(p.begin(), p.end()));
            return o::pdist_loss(s::score_all(local, ep), ll);
          },
          scorer_values);

  const m::GumbelParams gp{0.5, 1.3, 3};
  std::vector<Array> noise;
  for (int j = 0; j < 3; ++j) noise.push_back(m::gumbel_noise(5, rng));
  topk.run("relaxed_topk", [&](Span p) { return probe(m::relaxed_topk(m::ScoreVector(p[0]), gp, noise).m); },
           {random_array({5}, rng)});
  {
    r::ReaderConfig c;
    c.embed_dim = 8;
    c.seed = 3;
    const auto reader = perturbed_reader(c, 17);
    const auto bank = r::prefill(reader, ep.docs);
    topk.run("grerank",
             [&](Span p) {
               const s::MlpScorer local(sc, std::vector<Node>(p.begin(), p.end()));
               return o::grerank_loss(s::score_all(local, ep), reader, ep, bank, gp, noise);
             },
             scorer_values);
    topk.run("grerank_scores",
             [&](Span p) { return o::grerank_loss(m::ScoreVector(p[0]), reader, ep, bank, gp, noise); },
             {random_array({5}, rng)});
  }

  // A gradient off by 0.1% must be caught.
  GradSuite control;
  control.run("control",
              [](Span p) {
                return probe(d::make_node("bad_identity", Array(p[0].value()), {p[0]},
                                          [](const Node&, const Array& g, std::span<Array*> out) {
                                            for (std::size_t i = 0; i < g.size(); ++i) (*out[0])[i] += 1.001 * g[i];
                                          }));
              },
              {random_array({4}, rng)});

  const bool pass = ops.worst < 1e-5 && topk.worst < 1e-4 && control.worst >= 1e-5;
  return {pass, fmt("%zu checks over %zu entries: worst rel %.2e (%s, tol 1e-5), worst abs %.1e; relaxed top-k "
                    "paths worst rel %.2e (%s, tol 1e-4); wrong-gradient control rel %.2e",
                    ops.checks + topk.checks, ops.entries + topk.entries, ops.worst, ops.worst_name.c_str(),
                    std::max(ops.worst_abs, topk.worst_abs), topk.worst, topk.worst_name.c_str(), control.worst)};
}

// A2 -----------------------------------------------------------------------

a::TokenBank random_bank(Rng& rng, std::size_t docs) {
  std::vector<std::size_t> lengths(docs);
  for (auto& l : lengths) l = 1 + rng.below(4);
  const std::size_t tokens = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  return a::TokenBank(d::constant(random_array({tokens, 4}, rng, -1, 1)),
                      d::constant(random_array({tokens, 3}, rng, -1, 1)), std::move(lengths));
}

Outcome a2() {
  Rng rng(202);
  double uniform = 0.0, onehot = 0.0, onehot_coarse = 0.0, norm = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(5);
    const auto bank = random_bank(rng, n);
    const Node q = d::constant(random_array({4}, rng, -1, 1));
    const Node ref = a::attention(q, bank);
    const Node uni = a::dma(q, bank, a::MaskVector::soft(d::constant(Array({n}, 0.05 + rng.uniform()))));
    const std::size_t j = rng.below(n);
    const auto limit = [&](double eps) {
      Array lim({n}, eps);
      lim[j] = 1.0 - eps;
      return a::dma(q, bank, a::MaskVector::soft(d::constant(lim)));
    };
    const Node soft = limit(1e-12);
    const Node coarse = limit(1e-10);
    const Node hard = a::masked_attention(q, bank, a::MaskVector::only(n, j));
    for (std::size_t r = 0; r < bank.tokens(); ++r) {
      uniform = std::max(uniform, std::abs(uni.value()[r] - ref.value()[r]));
      onehot = std::max(onehot, std::abs(soft.value()[r] - hard.value()[r]));
      onehot_coarse = std::max(onehot_coarse, std::abs(coarse.value()[r] - hard.value()[r]));
    }
    Array rm({n});
    for (double& x : rm.values()) x = 1e-6 + rng.uniform();
    const Node out = a::dma(q, bank, a::MaskVector::soft(d::constant(rm)));
    const auto p = out.value().values();
    norm = std::max(norm, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
  }
  return {uniform <= 1e-12 && onehot <= 1e-9 && norm <= 1e-12,
          fmt("uniform vs attention %.1e (tol 1e-12); one-hot limit %.1e at off-weight 1e-12 (tol 1e-9; %.1e at "
              "1e-10); normalization %.1e (tol 1e-12)",
              uniform, onehot, onehot_coarse, norm)};
}

// A3 -----------------------------------------------------------------------

Outcome a3() {
  Rng rng(303);
  const int trials = 100'000;
  std::size_t checked = 0, outside = 0;
  double worst_z = 0.0;
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = 3 + rng.below(6);
    std::vector<double> w(n);
    for (double& x : w) x = 4 * rng.uniform() - 2;
    const double kappa = 0.2 + 2.8 * rng.uniform();
    const auto scores = m::ScoreVector::constant(w);
    const auto p = m::selection_probability(w, kappa);
    std::vector<double> counts(n, 0.0);
    for (int i = 0; i < trials; ++i) {
      const auto mask = m::relaxed_topk(scores, {0.5, kappa, 1}, rng);
      const auto draw = mask.m.value().values();
      counts[std::max_element(draw.begin(), draw.end()) - draw.begin()] += 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double sigma = std::sqrt(trials * p[i] * (1 - p[i]));
      const double z = std::abs(counts[i] - trials * p[i]) / sigma;
      worst_z = std::max(worst_z, z);
      outside += z > 3.0;
      ++checked;
    }
  }
  return {outside == 0, fmt("%zu of %zu frequencies outside 3 sigma, worst |z| %.2f", outside, checked, worst_z)};
}

// A4 -----------------------------------------------------------------------

Outcome a4() {
  Rng rng(404);
  const std::size_t n = 20;
  const m::GumbelParams p{1e-3, 1.0, 5};
  std::size_t draws = 0, low = 0, misplaced = 0;
  double min_top = 1.0;
  for (int trial = 0; trial < 10'000; ++trial) {
    std::vector<double> w(n);
    for (double& x : w) x = rng.normal();
    const auto mask = m::relaxed_topk(m::ScoreVector::constant(w), p, rng);
    for (std::size_t j = 0; j < mask.draws.size(); ++j) {
      const auto v = mask.draws[j].value().values();
      std::vector<double> pert(n);
      for (std::size_t i = 0; i < n; ++i) pert[i] = mask.noise[j][i] + p.kappa * w[i];
      const std::size_t top = std::max_element(v.begin(), v.end()) - v.begin();
      misplaced += top != m::hard_topk(pert, 1)[0];
      low += v[top] <= 1 - 1e-6;
      min_top = std::min(min_top, v[top]);
      ++draws;
    }
  }
  return {low == 0 && misplaced == 0,
          fmt("n=%zu, w~N(0,1), k=%zu: %zu of %zu draws with top entry <= 1-1e-6 (min %.6f), %zu off the hard argmax",
              n, p.k, low, draws, min_top, misplaced)};
}

// A5 -----------------------------------------------------------------------

Outcome a5() {
  std::vector<double> r1, r5;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig c;
    c.override_seeds(seed);
    c.set("eval_interval", "2000");
    c.set("mining_episodes", "100");
    const auto reader = pretrained(c);
    const auto train_split = c.train_split();
    const auto test_split = c.test_split();
    const auto res = t::train(c.training(), train_split, test_split, reader);
    r1.push_back(t::evaluate_ranking(*res.scorer, train_split, 1).recall);
    r5.push_back(t::evaluate_ranking(*res.scorer, test_split, 5).recall);
  }
  const double m1 = median(r1), m5 = median(r5);
  return {m1 >= 0.90 && m5 >= 0.95,
          fmt("median mining Recall@1 %.3f (>= 0.90), reranker Recall@5 %.3f (>= 0.95) on %s held-out", m1, m5,
              ExperimentConfig().get("test_episodes").c_str())};
}

// A6 -----------------------------------------------------------------------

Outcome a6() {
  std::vector<double> gr, pd, em;
  std::size_t compared = 0, unequal = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig c;
    c.override_seeds(seed);
    c.set("task", "multi_hop");
    c.set("pretrain_steps", "3000");
    c.set("eval_interval", "2000");
    c.set("mining_episodes", "100");
    const auto reader = pretrained(c);
    const auto train_split = c.train_split();
    const auto test_split = c.test_split();
    for (const auto& [method, out] : {std::pair{"grerank", &gr}, std::pair{"pdist", &pd}, std::pair{"emdr", &em}}) {
      c.set("method", method);
      const auto res = t::train(c.training(), train_split, test_split, reader);
      out->push_back(res.last.reranker->indirect_recall);
    }
    for (std::size_t e = 0; e < 50; ++e) {
      const auto& ep = test_split[e];
      const auto lik = o::doc_likelihoods(reader, ep, r::prefill(reader, ep.docs), false);
      const auto target = o::pdist_target(lik.isolated);
      const auto post = o::emdr_posterior(lik.isolated, std::vector<double>(ep.size(), 1.0 / ep.size()));
      const std::size_t bridge = ep.indirect.at(0);
      for (std::size_t i = 0; i < ep.size(); ++i) {
        const bool has_answer = std::find(ep.docs[i].begin(), ep.docs[i].end(), ep.answer[0]) != ep.docs[i].end();
        if (has_answer || i == bridge) continue;
        ++compared;
        unequal += target[i] != target[bridge] || post[i] != post[bridge];
      }
    }
  }
  const double g = median(gr), p = median(pd), e = median(em);
  return {g - p >= 0.10 && g - e >= 0.10 && unequal == 0 && compared > 0,
          fmt("median indirect Recall@5 grerank %.3f, pdist %.3f, emdr %.3f (margin >= 0.10); "
              "bridge vs answerless documents: %zu of %zu PDist/EMDR targets differ",
              g, p, e, unequal, compared)};
}

// A7 -----------------------------------------------------------------------

double window_mean(const std::vector<t::TrajectoryPoint>& tr, bool tail, std::size_t w) {
  w = std::min(w, tr.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w; ++i) sum += tr[tail ? tr.size() - 1 - i : i].max_weight;
  return sum / static_cast<double>(w);
}

Outcome a7() {
  ExperimentConfig c;
  c.set("eval_interval", "2000");
  c.set("mining_episodes", "100");
  const auto reader = pretrained(c);
  const auto train_split = c.train_split();
  auto cfg = c.training();
  const auto with = t::train(cfg, train_split, {}, reader);
  cfg.noise = false;
  const auto without = t::train(cfg, train_split, {}, reader);
  const double n = static_cast<double>(train_split.front().size());
  const double end_with = with.trajectory.back().max_weight;
  const double end_without = without.trajectory.back().max_weight;
  const bool up_with = window_mean(with.trajectory, true, 100) > window_mean(with.trajectory, false, 100);
  const bool down_without =
      window_mean(without.trajectory, true, 100) <= window_mean(without.trajectory, false, 100) + 0.02;
  const bool pass = end_with >= 0.8 && std::abs(end_without - 1.0 / n) <= 0.02 && up_with && down_without;
  return {pass, fmt("with noise %.3f -> %.3f (>= 0.8, rising: %s); without noise %.3f -> %.3f "
                    "(within 0.02 of %.3f, not rising: %s)",
                    with.trajectory.front().max_weight, end_with, up_with ? "yes" : "no",
                    without.trajectory.front().max_weight, end_without, 1.0 / n, down_without ? "yes" : "no")};
}

// A8 -----------------------------------------------------------------------

Outcome a8() {
  ExperimentConfig c;
  c.set("method", "freeweights");
  c.set("steps", "500");
  c.set("eval_interval", "500");
  const auto reader = pretrained(c);
  const std::vector<data::Episode> split{c.train_split().front()};
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = c.training();
    cfg.noise_seed = 1000 + seed;
    const auto res = t::train(cfg, split, {}, reader);
    const auto w = res.weights->scores();
    hits += m::hard_topk(w.values(), split[0].gold.size()) == split[0].gold;
  }
  return {hits >= 9, fmt("%zu of 10 seeds recover the gold set within 500 steps (>= 9)", hits)};
}

// A9 -----------------------------------------------------------------------

Outcome a9() {
  ExperimentConfig c;
  c.set("steps", "500");
  c.set("eval_interval", "500");
  c.set("mining_episodes", "100");
  const auto reader = pretrained(c);
  const auto train_split = c.train_split();
  const auto taus = c.get_doubles("sweep_taus");
  const auto kappas = c.get_doubles("sweep_kappas");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < c.get_uint("sweep_seeds"); ++i) seeds.push_back(c.get_uint("noise_seed") + i);
  const auto cells = t::sweep(c.training(), taus, kappas, seeds, train_split, {}, reader, c.get_uint("threads"));

  const auto cell_stat = [&](double tau, double kappa, auto stat) {
    std::vector<double> v;
    for (const auto& cell : cells) {
      if (cell.tau == tau && cell.kappa == kappa) v.push_back(stat(cell.result.trajectory));
    }
    return median(v);
  };
  const auto at_end = [](const std::vector<t::TrajectoryPoint>& tr) { return tr.back().max_weight; };
  const auto variance = [](const std::vector<t::TrajectoryPoint>& tr) {
    double mean = 0.0;
    for (const auto& p : tr) mean += p.max_weight;
    mean /= static_cast<double>(tr.size());
    double var = 0.0;
    for (const auto& p : tr) var += (p.max_weight - mean) * (p.max_weight - mean);
    return var / static_cast<double>(tr.size());
  };

  std::vector<double> by_kappa, by_tau;
  for (double k : kappas) by_kappa.push_back(cell_stat(0.5, k, at_end));
  for (double tau : taus) by_tau.push_back(cell_stat(tau, 1.0, variance));
  const bool kappa_ok = std::is_sorted(by_kappa.begin(), by_kappa.end());
  const bool tau_ok = std::is_sorted(by_tau.begin(), by_tau.end());
  std::ostringstream detail;
  detail << "median max weight at step 500 over kappa:";
  for (double x : by_kappa) detail << ' ' << fmt("%.3f", x);
  detail << (kappa_ok ? " (nondecreasing)" : " (NOT nondecreasing)") << "; trajectory variance over tau:";
  for (double x : by_tau) detail << ' ' << fmt("%.5f", x);
  detail << (tau_ok ? " (nondecreasing)" : " (NOT nondecreasing)");
  return {kappa_ok && tau_ok, detail.str()};
}

// A10 ----------------------------------------------------------------------

bool rows_equal(const a::TokenBank& x, const a::TokenBank& y, std::size_t skip_doc) {
  const std::size_t dk = x.key_dim(), dv = x.value_dim();
  for (std::size_t row = 0; row < x.tokens(); ++row) {
    if (x.token_doc()[row] == skip_doc) continue;
    for (std::size_t c = 0; c < dk; ++c) {
      if (x.keys().value().at(row, c) != y.keys().value().at(row, c)) return false;
    }
    for (std::size_t c = 0; c < dv; ++c) {
      if (x.values().value().at(row, c) != y.values().value().at(row, c)) return false;
    }
  }
  return true;
}

Outcome a10() {
  data::TaskSpec spec;
  spec.task = data::Task::kMultiHop;
  r::ReaderConfig c;
  c.hops = 2;
  c.max_query_len = spec.max_query_len();
  const auto reader = perturbed_reader(c, 1010);
  Rng rng(1011);
  std::size_t independent = 0, invariant = 0;
  const std::size_t episodes = 100;
  for (std::size_t e = 0; e < episodes; ++e) {
    const auto ep = data::generate(spec, 1012, e);
    const std::size_t n = ep.size();
    const auto bank = r::prefill(reader, ep.docs);

    auto changed = ep.docs;
    const std::size_t j = rng.below(n);
    changed[j] = data::generate(spec, 1013, e).docs[rng.below(n)];
    independent += rows_equal(bank, r::prefill(reader, changed), j);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Array mask({n}), pmask({n});
    for (double& x : mask.values()) x = 0.01 + rng.uniform();
    std::vector<data::Tokens> pdocs;
    for (std::size_t i = 0; i < n; ++i) {
      pdocs.push_back(ep.docs[perm[i]]);
      pmask[i] = mask[perm[i]];
    }
    const double loss =
        r::language_loss(reader, ep.query, ep.answer, bank, a::MaskVector::soft(d::constant(mask))).item();
    const double ploss = r::language_loss(reader, ep.query, ep.answer, r::prefill(reader, pdocs),
                                          a::MaskVector::soft(d::constant(pmask)))
                             .item();
    invariant += loss == ploss;
  }
  return {independent == episodes && invariant == episodes,
          fmt("encoding independence %zu/%zu, joint permutation invariance %zu/%zu (bit-exact)", independent,
              episodes, invariant, episodes)};
}

struct Criterion {
  std::string id;
  double budget;
  Outcome (*fn)();
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria A1-A10"};
  std::vector<std::string> only, expect_red;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--expect-red", expect_red, "criteria known to fail")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {"A1", 60, a1},   {"A2", 10, a2},   {"A3", 30, a3},   {"A4", 10, a4},    {"A5", 600, a5},
      {"A6", 1200, a6}, {"A7", 600, a7},  {"A8", 120, a8},  {"A9", 1800, a9}, {"A10", 10, a10},
  };
  const std::set<std::string> wanted(only.begin(), only.end());
  std::set<std::string> red;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = out.pass && secs < c.budget;
    if (!pass) red.insert(c.id);
    std::printf("%s %s %s [%.1f s, budget %.0f s]\n", c.id.c_str(), pass ? "PASS" : "FAIL", out.detail.c_str(), secs,
                c.budget);
    std::fflush(stdout);
  }
  std::set<std::string> expected;
  for (const auto& id : expect_red) {
    if (wanted.empty() || wanted.count(id)) expected.insert(id);
  }
  return red == expected ? 0 : 1;
}
