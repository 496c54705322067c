#include "grerank/subset_mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "grerank/error.hpp"

namespace grerank::mask {

ScoreVector::ScoreVector(diff::Node w) : w_(std::move(w)) {
  if (!w_.valid() || w_.value().rank() != 1) {
    throw ContractError("ScoreVector requires a rank-1 node");
  }
  const auto v = w_.value().values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw DomainError("ScoreVector: non-finite score", i);
  }
}

ScoreVector ScoreVector::constant(std::vector<double> w) {
  return ScoreVector(diff::constant(diff::Array::vector(std::move(w))));
}

void GumbelParams::validate(std::size_t n) const {
  if (!(tau >= kMinTau)) {
    throw ContractError("tau " + std::to_string(tau) + " below floor " + std::to_string(kMinTau));
  }
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ContractError("kappa must be finite and nonnegative");
  if (k < 1 || k > n) {
    throw ContractError("subset size k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
}

double gumbel_from_uniform(double u) {
  const double c = std::clamp(u, kUniformLow, kUniformHigh);
  return -std::log(-std::log(c));
}

diff::Array gumbel_noise(std::size_t n, Rng& rng) {
  diff::Array g(diff::Shape{n});
  for (std::size_t i = 0; i < n; ++i) g[i] = gumbel_from_uniform(rng.uniform());
  return g;
}

diff::Node perturb(const diff::Node& w, const diff::Array& g, double kappa) {
  if (w.shape() != g.shape()) {
    throw ContractError("perturb: score shape " + diff::shape_string(w.shape()) + " vs noise shape " +
                        diff::shape_string(g.shape()));
  }
  return diff::add(diff::constant(g), diff::scale(w, kappa));
}

diff::Node relaxed_onehot(const diff::Node& w_tilde, double tau) {
  if (!(tau >= GumbelParams::kMinTau)) {
    throw ContractError("relaxed_onehot: tau " + std::to_string(tau) + " below floor");
  }
  return diff::softmax(diff::scale(w_tilde, 1.0 / tau), 0);
}

double RelaxedMask::max_normalized_weight() const {
  const auto v = m.value().values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return *std::max_element(v.begin(), v.end()) / total;
}

namespace {

diff::Node combine(std::vector<diff::Node> draws) {
  // The floor only wins where every draw underflowed to zero.
  draws.push_back(diff::constant(diff::Array(draws.front().shape(), kMaskFloor)));
  return diff::max_elementwise(std::span<const diff::Node>(draws));
}

}  // namespace

RelaxedMask relaxed_topk(const ScoreVector& w, const GumbelParams& p, Rng& rng) {
  p.validate(w.size());
  std::vector<diff::Array> noise;
  noise.reserve(p.k);
  for (std::size_t j = 0; j < p.k; ++j) noise.push_back(gumbel_noise(w.size(), rng));
  return relaxed_topk(w, p, noise);
}

RelaxedMask relaxed_topk(const ScoreVector& w, const GumbelParams& p, std::span<const diff::Array> noise) {
  p.validate(w.size());
  if (noise.size() != p.k) {
    throw ContractError("relaxed_topk: " + std::to_string(noise.size()) + " noise arrays for k=" +
                        std::to_string(p.k));
  }
  RelaxedMask out;
  out.params = p;
  out.noise.assign(noise.begin(), noise.end());
  for (const diff::Array& g : noise) {
    out.draws.push_back(relaxed_onehot(perturb(w.node(), g, p.kappa), p.tau));
  }
  out.m = combine(out.draws);
  return out;
}

RelaxedMask noiseless_mask(const ScoreVector& w, const GumbelParams& p) {
  p.validate(w.size());
  RelaxedMask out;
  out.params = p;
  const diff::Array zeros(diff::Shape{w.size()}, 0.0);
  out.draws.push_back(relaxed_onehot(perturb(w.node(), zeros, p.kappa), p.tau));
  out.noise.push_back(zeros);
  out.m = combine(out.draws);
  return out;
}

std::vector<double> selection_probability(std::span<const double> w, double kappa) {
  if (w.empty()) throw ContractError("selection_probability: empty score vector");
  std::vector<double> out(w.size());
  double hi = -INFINITY;
  for (double x : w) hi = std::max(hi, kappa * x);
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = std::exp(kappa * w[i] - hi);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<std::size_t> ranking(std::span<const double> w) {
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  return order;
}

std::vector<std::size_t> hard_topk(std::span<const double> w, std::size_t k) {
  if (k < 1 || k > w.size()) {
    throw ContractError("hard_topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(w.size()) + "]");
  }
  std::vector<std::size_t> order = ranking(w);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace grerank::mask
