#include <gtest/gtest.h>

#include <sstream>

#include "grerank/error.hpp"
#include "grerank/gradcheck.hpp"
#include "grerank/scorer.hpp"

namespace d = grerank::diff;
namespace s = grerank::scorer;
namespace m = grerank::mask;
namespace data = grerank::data;
using d::Array;
using d::Node;

namespace {

s::MlpScorer perturbed_scorer(std::uint64_t seed = 4) {
  s::ScorerConfig c;
  c.embed_dim = 8;
  c.hidden = 6;
  c.seed = seed;
  s::MlpScorer sc(c);
  grerank::Rng rng(seed + 1);
  for (Node& p : sc.params()) {
    for (double& x : p.mutable_value().values()) x += 0.3 * rng.normal();
  }
  return sc;
}

}  // namespace

TEST(Scorer, IdenticalPairsIdenticalScores) {
  const auto sc = perturbed_scorer();
  const data::Tokens q{3, 1, 40}, doc{3, 1, 40, 1, 50};
  EXPECT_EQ(s::score(sc, q, doc).item(), s::score(sc, q, doc).item());
  const auto all = s::score_all(sc, q, {doc, {5, 1, 41, 1, 52}, doc});
  EXPECT_EQ(all[0], all[2]);
}

TEST(Scorer, ZeroFinalLayerGivesZeroScores) {
  auto sc = perturbed_scorer();
  for (double& x : sc.params()[3].mutable_value().values()) x = 0.0;
  for (double& x : sc.params()[4].mutable_value().values()) x = 0.0;
  const auto ep = data::gen_single_hop(3, 7, data::Vocabulary());
  const auto scores = s::score_all(sc, ep);
  for (double v : scores.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s::score(sc, ep.query, ep.docs[0]).item(), 0.0);
}

TEST(Scorer, ScoreGradient) {
  const auto sc = perturbed_scorer();
  const data::Tokens q{3, 1, 40}, doc{3, 1, 41, 1, 50};
  std::vector<Array> values;
  for (const Node& p : sc.params()) values.push_back(p.value());
  const auto r = d::check_gradient(
      [&](std::span<const Node> p) {
        const s::MlpScorer local(sc.config(), std::vector<Node>(p.begin(), p.end()));
        return s::score(local, q, doc);
      },
      values);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Scorer, ScoreAllGradient) {
  const auto sc = perturbed_scorer(9);
  const auto ep = data::gen_single_hop(5, 4, data::Vocabulary());
  std::vector<Array> values;
  for (const Node& p : sc.params()) values.push_back(p.value());
  const auto r = d::check_gradient(
      [&](std::span<const Node> p) {
        const s::MlpScorer local(sc.config(), std::vector<Node>(p.begin(), p.end()));
        return d::logsumexp(s::score_all(local, ep).node());
      },
      values);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(ScoreAll, PermutationAndDefinition) {
  const auto sc = perturbed_scorer();
  const auto ep = data::gen_single_hop(11, 9, data::Vocabulary());
  const auto all = s::score_all(sc, ep);
  ASSERT_EQ(all.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(all[i], s::score(sc, ep.query, ep.docs[i]).item(), 1e-14);

  const std::vector<std::size_t> perm{4, 8, 0, 2, 1, 7, 3, 6, 5};
  std::vector<data::Tokens> pdocs;
  for (std::size_t j : perm) pdocs.push_back(ep.docs[j]);
  const auto pall = s::score_all(sc, ep.query, pdocs);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(pall[i], all[perm[i]]);

  EXPECT_EQ(s::score_all(sc, ep.query, {ep.docs[0]}).size(), 1u);
}

TEST(FreeWeights, ZeroInitUniformSelection) {
  const s::FreeWeights fw(6);
  const auto w = fw.scores();
  for (double v : w.values()) EXPECT_EQ(v, 0.0);
  for (double p : m::selection_probability(w.values(), 1.0)) EXPECT_DOUBLE_EQ(p, 1.0 / 6.0);
}

TEST(FreeWeights, GradientFlows) {
  const s::FreeWeights fw(5);
  grerank::Rng rng(2);
  const auto mask = s::free_weights_mask(fw, {0.5, 1.0, 2}, rng);
  d::backward(d::sum(d::mul(mask.m, d::constant(Array::vector({1, -1, 0.5, 2, 0})))));
  bool nonzero = false;
  for (double g : fw.node().grad().values()) nonzero = nonzero || g != 0.0;
  EXPECT_TRUE(nonzero);
}

TEST(Scorer, SaveLoadRoundTrip) {
  const auto sc = perturbed_scorer();
  std::stringstream buf;
  s::save(sc, buf);
  const auto loaded = s::load_scorer(buf);
  ASSERT_EQ(loaded.params().size(), sc.params().size());
  for (std::size_t i = 0; i < sc.params().size(); ++i) EXPECT_EQ(loaded.params()[i].value(), sc.params()[i].value());
  std::stringstream empty;
  EXPECT_THROW(s::load_scorer(empty), grerank::ParseError);
}

TEST(Scorer, ContractErrors) {
  const auto sc = perturbed_scorer();
  EXPECT_THROW(s::score(sc, {3, 1, 99}, {3}), grerank::DomainError);
  EXPECT_THROW(s::score(sc, {}, {3}), grerank::ContractError);
  EXPECT_THROW(s::score_all(sc, {3}, {}), grerank::ContractError);
}
