#include <benchmark/benchmark.h>

#include <numeric>

#include "grerank/attention.hpp"
#include "grerank/objectives.hpp"
#include "grerank/reader.hpp"
#include "grerank/scorer.hpp"
#include "grerank/subset_mask.hpp"
#include "grerank/synthdata.hpp"

namespace a = grerank::attn;
namespace d = grerank::diff;
namespace m = grerank::mask;
namespace r = grerank::reader;
namespace s = grerank::scorer;
namespace data = grerank::data;

namespace {

std::vector<double> scores(std::size_t n, grerank::Rng& rng) {
  std::vector<double> w(n);
  for (double& x : w) x = rng.normal();
  return w;
}

void BM_RelaxedTopk(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  grerank::Rng rng(1);
  const auto w = m::ScoreVector::constant(scores(n, rng));
  for (auto _ : state) {
    auto mask = m::relaxed_topk(w, {0.5, 1.0, k}, rng);
    benchmark::DoNotOptimize(mask.m.value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * k));
}
BENCHMARK(BM_RelaxedTopk)->Args({20, 1})->Args({20, 5})->Args({100, 5})->Args({100, 20});

void BM_RelaxedTopkBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  grerank::Rng rng(2);
  const auto init = scores(n, rng);
  for (auto _ : state) {
    const d::Node w = d::parameter(d::Array::vector(init));
    const auto mask = m::relaxed_topk(m::ScoreVector(w), {}, rng);
    d::backward(d::sum(mask.m));
    benchmark::DoNotOptimize(w.grad()[0]);
  }
}
BENCHMARK(BM_RelaxedTopkBackward)->Arg(20)->Arg(100);

void BM_Dma(benchmark::State& state) {
  const auto docs = static_cast<std::size_t>(state.range(0));
  const std::size_t len = 5, dim = 32;
  grerank::Rng rng(3);
  d::Array keys({docs * len, dim}), values({docs * len, dim}), q({dim});
  for (double& x : keys.values()) x = rng.normal();
  for (double& x : values.values()) x = rng.normal();
  for (double& x : q.values()) x = rng.normal();
  const a::TokenBank bank(d::constant(keys), d::constant(values), std::vector<std::size_t>(docs, len));
  const auto mask = a::MaskVector::soft(d::constant(d::Array({docs}, 0.5)));
  const d::Node query = d::constant(q);
  for (auto _ : state) {
    const d::Node ctx = a::attend(a::dma(query, bank, mask), bank);
    benchmark::DoNotOptimize(ctx.value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs * len));
}
BENCHMARK(BM_Dma)->Arg(20)->Arg(100);

void BM_ReaderLoss(benchmark::State& state) {
  const bool with_backward = state.range(0) != 0;
  data::TaskSpec spec;
  r::ReaderConfig c;
  c.max_query_len = spec.max_query_len();
  const r::Reader reader = r::Reader(c).frozen();
  const auto ep = data::generate(spec, 4, 0);
  const auto bank = r::prefill(reader, ep.docs);
  for (auto _ : state) {
    const d::Node mask = d::parameter(d::Array({ep.size()}, 0.3));
    const d::Node loss = r::language_loss(reader, ep.query, ep.answer, bank, a::MaskVector::soft(mask));
    if (with_backward) d::backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_ReaderLoss)->Arg(0)->Arg(1);

void BM_Prefill(benchmark::State& state) {
  data::TaskSpec spec;
  r::ReaderConfig c;
  c.max_query_len = spec.max_query_len();
  const r::Reader reader = r::Reader(c).frozen();
  const auto ep = data::generate(spec, 5, 0);
  for (auto _ : state) {
    const auto bank = r::prefill(reader, ep.docs);
    benchmark::DoNotOptimize(bank.tokens());
  }
}
BENCHMARK(BM_Prefill);

void BM_ScoreAll(benchmark::State& state) {
  const bool with_backward = state.range(0) != 0;
  const s::MlpScorer scorer(s::ScorerConfig{});
  const auto ep = data::generate(data::TaskSpec{}, 6, 0);
  for (auto _ : state) {
    const auto w = s::score_all(scorer, ep);
    if (with_backward) d::backward(d::sum(w.node()));
    benchmark::DoNotOptimize(w[0]);
  }
}
BENCHMARK(BM_ScoreAll)->Arg(0)->Arg(1);

void BM_GRerankStep(benchmark::State& state) {
  data::TaskSpec spec;
  r::ReaderConfig c;
  c.max_query_len = spec.max_query_len();
  const r::Reader reader = r::Reader(c).frozen();
  const s::MlpScorer scorer(s::ScorerConfig{});
  const auto ep = data::generate(spec, 7, 0);
  const auto bank = r::detach(r::prefill(reader, ep.docs));
  grerank::Rng rng(8);
  for (auto _ : state) {
    const d::Node loss = grerank::obj::grerank_loss(s::score_all(scorer, ep), reader, ep, bank, {}, rng);
    d::backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_GRerankStep);

}  // namespace

BENCHMARK_MAIN();
