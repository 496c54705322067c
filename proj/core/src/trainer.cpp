#include "grerank/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "grerank/error.hpp"
#include "grerank/metrics.hpp"
#include "grerank/objectives.hpp"

namespace grerank::train {

using diff::Array;
using diff::Node;

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<Array* const> params, std::span<const Array* const> grads, AdamState& state, double lr) {
  if (params.size() != grads.size()) throw ContractError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Array* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: state belongs to a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || state.m[i].shape() != params[i]->shape()) {
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    const auto g = grads[i]->values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw DivergenceError("non-finite gradient in parameter " + std::to_string(i) + " at index " +
                              std::to_string(j));
      }
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    const auto g = grads[i]->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

void adam_step(std::span<const Node> params, AdamState& state, double lr) {
  std::vector<Node> nodes(params.begin(), params.end());
  std::vector<Array*> values;
  std::vector<const Array*> grads;
  for (Node& n : nodes) {
    values.push_back(&n.mutable_value());
    grads.push_back(&n.grad());
  }
  adam_step(values, grads, state, lr);
  for (Node& n : nodes) n.zero_grad();
}

// ---------------------------------------------------------------------------
// Reader pretraining

void pretrain(reader::Reader& reader, const data::TaskSpec& task, const PretrainConfig& config,
              const std::function<void(const PretrainRecord&)>& on_record) {
  if (config.steps == 0 || config.batch == 0) throw ContractError("pretrain: steps and batch must be positive");
  data::TaskSpec spec = task;
  if (config.candidates) spec.candidates = config.candidates;
  const std::vector<Node> params = reader.params().all();
  AdamState adam;
  Rng context_rng(config.seed ^ 0x5eedc0de);
  std::size_t index = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    Node total;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const data::Episode ep = data::generate(spec, config.seed, index++);
      Node loss;
      if (config.mask != PretrainMask::kFull) {
        // Only visible documents are encoded.
        std::vector<data::Tokens> visible;
        for (std::size_t g : ep.gold) visible.push_back(ep.docs[g]);
        if (config.mask == PretrainMask::kGoldPlus) {
          std::vector<std::size_t> others;
          for (std::size_t i = 0; i < ep.docs.size(); ++i) {
            if (std::find(ep.gold.begin(), ep.gold.end(), i) == ep.gold.end()) others.push_back(i);
          }
          context_rng.shuffle(others.begin(), others.end());
          const std::size_t room = config.context > visible.size() ? config.context - visible.size() : 0;
          const std::size_t extra = context_rng.below(std::min(room, others.size()) + 1);
          for (std::size_t j = 0; j < extra; ++j) visible.push_back(ep.docs[others[j]]);
        }
        const attn::TokenBank bank = reader::prefill(reader, visible);
        loss = reader::language_loss(reader, ep.query, ep.answer, bank, attn::MaskVector::all(visible.size()));
      } else {
        const attn::TokenBank bank = reader::prefill(reader, ep.docs);
        loss = reader::language_loss(reader, ep.query, ep.answer, bank, attn::MaskVector::all(ep.docs.size()));
      }
      total = b == 0 ? loss : diff::add(total, loss);
    }
    total = diff::scale(total, 1.0 / static_cast<double>(config.batch));
    if (!std::isfinite(total.item())) throw DivergenceError("reader pretraining loss is not finite at step " + std::to_string(step));
    diff::backward(total);
    adam_step(params, adam, config.lr);
    reader.project();
    if (on_record) on_record({step, total.item()});
  }
}

// ---------------------------------------------------------------------------
// Reranker training

std::string method_name(Method m) {
  switch (m) {
    case Method::kGRerank: return "grerank";
    case Method::kADist: return "adist";
    case Method::kEMDR: return "emdr";
    case Method::kPDist: return "pdist";
    case Method::kLOOP: return "loop";
    case Method::kFreeWeights: return "freeweights";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kGRerank, Method::kADist, Method::kEMDR, Method::kPDist, Method::kLOOP,
                   Method::kFreeWeights}) {
    if (method_name(m) == name) return m;
  }
  throw ContractError("unknown method '" + name + "'");
}

void TrainConfig::validate() const {
  if (steps == 0 || batch == 0 || eval_interval == 0 || eval_k == 0) {
    throw ContractError("train: steps, batch, eval_interval and eval_k must be positive");
  }
  if (!(lr > 0.0)) throw ContractError("train: learning rate must be positive");
}

namespace {

struct Prepared {
  std::vector<attn::TokenBank> banks;
  std::vector<std::vector<double>> targets;  // adist and loop
  std::vector<std::vector<double>> log_lik;  // emdr and pdist
};

bool needs_banks(Method m) { return m == Method::kGRerank || m == Method::kFreeWeights; }

Prepared prepare(Method method, const std::vector<data::Episode>& episodes, const reader::Reader& frozen,
                 std::size_t only = SIZE_MAX) {
  Prepared out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const data::Episode& ep = episodes[i];
    if (only != SIZE_MAX && i != only) {
      out.banks.emplace_back();
      out.targets.emplace_back();
      out.log_lik.emplace_back();
      continue;
    }
    attn::TokenBank bank = reader::prefill(frozen, ep.docs);
    std::vector<double> target, log_lik;
    switch (method) {
      case Method::kADist: target = obj::adist_target(obj::attention_stats(frozen, ep, bank)); break;
      case Method::kLOOP: target = obj::loop_target(obj::doc_likelihoods(frozen, ep, bank, true).leave_one_out); break;
      case Method::kEMDR:
      case Method::kPDist: log_lik = obj::doc_likelihoods(frozen, ep, bank, false).isolated; break;
      default: break;
    }
    out.targets.push_back(std::move(target));
    out.log_lik.push_back(std::move(log_lik));
    out.banks.push_back(needs_banks(method) ? std::move(bank) : attn::TokenBank());
  }
  return out;
}

struct MaskStats {
  double max_weight = 0.0;
  double entropy = 0.0;
};

MaskStats mask_stats(const mask::RelaxedMask& m) {
  const auto v = m.m.value().values();
  double total = 0.0;
  for (double x : v) total += x;
  MaskStats s;
  for (double x : v) {
    const double p = x / total;
    s.max_weight = std::max(s.max_weight, p);
    if (p > 0.0) s.entropy -= p * std::log(p);
  }
  return s;
}

std::span<const data::Episode> mining_split(const TrainConfig& c, const std::vector<data::Episode>& train) {
  const std::size_t n = c.mining_episodes ? std::min(c.mining_episodes, train.size()) : train.size();
  return {train.data(), n};
}

TrainResult train_impl(const TrainConfig& config, const std::vector<data::Episode>& train_split,
                       const std::vector<data::Episode>& test_split, const reader::Reader& frozen,
                       const Prepared& prep, const std::function<void(const RunRecord&)>& on_record) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  const bool free = config.method == Method::kFreeWeights;
  const bool masked = config.method == Method::kGRerank || free;

  TrainResult result;
  std::vector<Node> params;
  if (free) {
    result.weights.emplace(train_split.at(config.free_weights_episode).docs.size());
    params.push_back(result.weights->node());
  } else {
    scorer::ScorerConfig sc = config.scorer;
    sc.seed = config.init_seed;
    result.scorer.emplace(sc);
    params = result.scorer->params();
  }

  Rng data_rng(config.data_seed);
  Rng noise_rng(config.noise_seed);
  AdamState adam;
  double interval_loss = 0.0, interval_weight = 0.0;
  std::size_t interval_steps = 0;
  bool have_best = false;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    Node total;
    double weight_sum = 0.0, entropy_sum = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const std::size_t idx = free ? config.free_weights_episode : data_rng.below(train_split.size());
      const data::Episode& ep = train_split[idx];
      const mask::ScoreVector w = free ? result.weights->scores() : scorer::score_all(*result.scorer, ep);
      Node loss;
      switch (config.method) {
        case Method::kGRerank:
        case Method::kFreeWeights: {
          mask::RelaxedMask m;
          loss = obj::grerank_loss(w, frozen, ep, prep.banks[idx], config.gumbel, noise_rng, config.noise, &m);
          const MaskStats s = mask_stats(m);
          weight_sum += s.max_weight;
          entropy_sum += s.entropy;
          break;
        }
        case Method::kEMDR: loss = obj::emdr_loss(w, prep.log_lik[idx]); break;
        case Method::kPDist: loss = obj::pdist_loss(w, prep.log_lik[idx]); break;
        case Method::kADist:
        case Method::kLOOP: loss = obj::kl_to_scores(prep.targets[idx], w); break;
      }
      total = b == 0 ? loss : diff::add(total, loss);
    }
    total = diff::scale(total, 1.0 / static_cast<double>(config.batch));
    const double loss_value = total.item();
    if (!std::isfinite(loss_value) || loss_value > config.divergence_threshold) {
      std::string dump = result.records.empty() ? "none" : to_json(result.records.back());
      throw DivergenceError("training diverged at step " + std::to_string(step) + " (loss " +
                            std::to_string(loss_value) + "); last record: " + dump);
    }
    diff::backward(total);
    adam_step(params, adam, config.lr);

    const double bsz = static_cast<double>(config.batch);
    if (masked) result.trajectory.push_back({step, weight_sum / bsz, entropy_sum / bsz});
    interval_loss += loss_value;
    interval_weight += weight_sum / bsz;
    ++interval_steps;

    if (step % config.eval_interval == 0 || step == config.steps) {
      RunRecord r;
      r.step = step;
      r.loss = interval_loss / static_cast<double>(interval_steps);
      r.max_weight = masked ? interval_weight / static_cast<double>(interval_steps) : -1.0;
      if (free) {
        r.mining = evaluate_ranking(*result.weights, train_split[config.free_weights_episode], config.eval_k);
      } else {
        r.mining = evaluate_ranking(*result.scorer, mining_split(config, train_split), config.eval_k);
        if (!test_split.empty()) r.reranker = evaluate_ranking(*result.scorer, test_split, config.eval_k);
        if (config.generator_eval && step == config.steps) {
          const auto& split = test_split.empty() ? train_split : test_split;
          r.exact_match = exact_match(frozen, score_episodes(*result.scorer, split), split, config.eval_k);
        }
      }
      r.seconds = std::chrono::duration<double>(Clock::now() - started).count();
      interval_loss = interval_weight = 0.0;
      interval_steps = 0;
      if (!have_best || r.mining.recall > result.best.mining.recall) {
        result.best = r;
        have_best = true;
      }
      result.last = r;
      result.records.push_back(r);
      if (on_record) on_record(r);
    }
  }
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<data::Episode>& train_split,
                  const std::vector<data::Episode>& test_split, const reader::Reader& reader,
                  const std::function<void(const RunRecord&)>& on_record) {
  config.validate();
  if (train_split.empty()) throw ContractError("train: empty training split");
  if (config.method == Method::kFreeWeights && config.free_weights_episode >= train_split.size()) {
    throw ContractError("train: free_weights_episode out of range");
  }
  const reader::Reader frozen = reader.frozen();
  const std::size_t only = config.method == Method::kFreeWeights ? config.free_weights_episode : SIZE_MAX;
  const Prepared prep = prepare(config.method, train_split, frozen, only);
  return train_impl(config, train_split, test_split, frozen, prep, on_record);
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<std::vector<double>> score_episodes(const scorer::MlpScorer& s, std::span<const data::Episode> episodes) {
  std::vector<std::vector<double>> out;
  out.reserve(episodes.size());
  for (const data::Episode& ep : episodes) {
    const mask::ScoreVector w = scorer::score_all(s, ep);
    out.emplace_back(w.values().begin(), w.values().end());
  }
  return out;
}

SettingMetrics evaluate_scores(std::span<const std::vector<double>> scores, std::span<const data::Episode> episodes,
                               std::size_t k) {
  if (scores.size() != episodes.size()) throw ContractError("evaluate_scores: size mismatch");
  if (episodes.empty()) throw ContractError("evaluate_scores: no episodes");
  SettingMetrics m;
  double indirect = 0.0;
  std::size_t with_indirect = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const data::Episode& ep = episodes[i];
    if (k > ep.docs.size()) throw ContractError("evaluate: k exceeds candidate count");
    const metrics::RankMetrics r = metrics::rank_metrics(scores[i], ep.gold, k);
    m.recall += r.recall;
    m.ndcg += r.ndcg;
    m.mrr += r.mrr;
    if (!ep.indirect.empty()) {
      const std::vector<std::size_t> order = mask::ranking(scores[i]);
      indirect += metrics::recall_at_k(order, ep.indirect, k);
      ++with_indirect;
    }
  }
  const double n = static_cast<double>(episodes.size());
  m.recall /= n;
  m.ndcg /= n;
  m.mrr /= n;
  m.indirect_recall = with_indirect ? indirect / static_cast<double>(with_indirect) : -1.0;
  return m;
}

SettingMetrics evaluate_ranking(const scorer::MlpScorer& s, std::span<const data::Episode> episodes, std::size_t k) {
  return evaluate_scores(score_episodes(s, episodes), episodes, k);
}

SettingMetrics evaluate_ranking(const scorer::FreeWeights& w, const data::Episode& ep, std::size_t k) {
  const auto v = w.node().value().values();
  const std::vector<std::vector<double>> scores{{v.begin(), v.end()}};
  return evaluate_scores(scores, std::span<const data::Episode>(&ep, 1), k);
}

double exact_match(const reader::Reader& reader, std::span<const std::vector<double>> scores,
                   std::span<const data::Episode> episodes, std::size_t k) {
  if (scores.size() != episodes.size()) throw ContractError("exact_match: size mismatch");
  if (episodes.empty()) throw ContractError("exact_match: no episodes");
  const reader::Reader frozen = reader.frozen();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const data::Episode& ep = episodes[i];
    if (k > ep.docs.size()) throw ContractError("exact_match: k exceeds candidate count");
    std::vector<double> m(ep.docs.size(), 0.0);
    for (std::size_t d : mask::hard_topk(scores[i], k)) m[d] = 1.0;
    const attn::TokenBank bank = reader::prefill(frozen, ep.docs);
    hits += reader::generate(frozen, ep.query, bank, attn::MaskVector::hard(std::move(m)), ep.answer.size()) ==
            ep.answer;
  }
  return static_cast<double>(hits) / static_cast<double>(episodes.size());
}

EvalResult evaluate(Setting setting, const scorer::MlpScorer& s, std::span<const data::Episode> episodes,
                    const reader::Reader* reader, std::size_t k) {
  EvalResult out;
  if (setting == Setting::kGenerator) {
    if (!reader) throw ContractError("generator setting requires a reader");
    out.exact_match = exact_match(*reader, score_episodes(s, episodes), episodes, k);
  }
  out.ranking = evaluate_ranking(s, episodes, k);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<SweepCell> sweep(const TrainConfig& base, std::span<const double> taus, std::span<const double> kappas,
                             std::span<const std::uint64_t> noise_seeds, const std::vector<data::Episode>& train_split,
                             const std::vector<data::Episode>& test_split, const reader::Reader& reader,
                             std::size_t threads) {
  base.validate();
  if (base.method != Method::kGRerank) throw ContractError("sweep: only the grerank method has tau and kappa");
  std::vector<SweepCell> cells;
  for (double tau : taus) {
    for (double kappa : kappas) {
      for (std::uint64_t s : noise_seeds) cells.push_back({tau, kappa, s, {}});
    }
  }
  const reader::Reader frozen = reader.frozen();
  const Prepared prep = prepare(base.method, train_split, frozen);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cells.size());

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    // Each worker owns a reader copy.
    const reader::Reader local = frozen.frozen();
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        TrainConfig c = base;
        c.gumbel.tau = cells[i].tau;
        c.gumbel.kappa = cells[i].kappa;
        c.noise_seed = cells[i].noise_seed;
        cells[i].result = train_impl(c, train_split, test_split, local, prep, {});
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return cells;
}

// ---------------------------------------------------------------------------
// Output

namespace {

nlohmann::ordered_json metrics_json(const SettingMetrics& m) {
  nlohmann::ordered_json j;
  j["recall"] = m.recall;
  j["ndcg"] = m.ndcg;
  j["mrr"] = m.mrr;
  if (m.indirect_recall >= 0.0) j["indirect_recall"] = m.indirect_recall;
  return j;
}

}  // namespace

std::string to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss"] = r.loss;
  if (r.max_weight >= 0.0) j["max_weight"] = r.max_weight;
  j["mining"] = metrics_json(r.mining);
  if (r.reranker) j["reranker"] = metrics_json(*r.reranker);
  if (r.exact_match >= 0.0) j["exact_match"] = r.exact_match;
  j["seconds"] = r.seconds;
  return j.dump();
}

void write_trajectory_csv(std::span<const TrajectoryPoint> points, std::ostream& out) {
  out << "step,max_weight,entropy\n";
  out.precision(17);
  for (const TrajectoryPoint& p : points) out << p.step << ',' << p.max_weight << ',' << p.entropy << '\n';
}

}  // namespace grerank::train
