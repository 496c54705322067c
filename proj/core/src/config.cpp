#include "grerank/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "grerank/error.hpp"

namespace grerank::config {

namespace {

enum class Type { kString, kDouble, kInt, kUint, kBool, kDoubles, kChoice };

struct Key {
  KeyInfo info;
  Type type;
  std::vector<std::string> choices;
};

const std::vector<Key>& table() {
  static const std::vector<Key> t = {
      {{"task", "single_hop", "episode family: single_hop or multi_hop"}, Type::kChoice, {"single_hop", "multi_hop"}},
      {{"candidates", "20", "documents per episode"}, Type::kUint, {}},
      {{"chain_len", "2", "gold documents per multi-hop chain"}, Type::kUint, {}},
      {{"decoys", "1", "decoy chains per multi-hop episode"}, Type::kUint, {}},
      {{"vocab_size", "64", "vocabulary size (at least 64)"}, Type::kUint, {}},
      {{"entities", "32", "entity ids in the vocabulary"}, Type::kUint, {}},
      {{"relations", "8", "relation ids in the vocabulary"}, Type::kUint, {}},
      {{"train_episodes", "1000", "episodes in the training split"}, Type::kUint, {}},
      {{"test_episodes", "500", "episodes in the held-out split"}, Type::kUint, {}},
      {{"data_seed", "1", "seed for corpus generation and batch sampling"}, Type::kUint, {}},

      {{"reader_dim", "32", "reader embedding width (even)"}, Type::kUint, {}},
      {{"reader_window", "5", "positions mixed into each key"}, Type::kUint, {}},
      {{"reader_hops", "0", "cross-attention hops; 0 picks 1 for single_hop and chain_len otherwise"}, Type::kUint, {}},
      {{"reader_seed", "0", "reader initialization seed"}, Type::kUint, {}},
      {{"copy_init", "0.05", "initial weight of the copy distribution"}, Type::kDouble, {}},
      {{"pretrain_steps", "2000", "reader pretraining steps"}, Type::kUint, {}},
      {{"pretrain_batch", "32", "episodes per pretraining step"}, Type::kUint, {}},
      {{"pretrain_lr", "0.003", "reader pretraining learning rate"}, Type::kDouble, {}},
      {{"pretrain_mask", "auto",
        "documents visible during pretraining: gold, gold_plus (gold and random distractors), full, or auto (gold for "
        "single_hop, full otherwise)"},
       Type::kChoice, {"auto", "gold", "gold_plus", "full"}},
      {{"pretrain_context", "5", "largest visible set under gold_plus"}, Type::kUint, {}},
      {{"pretrain_candidates", "0", "documents per pretraining episode; 0 picks candidates for single_hop and 6 otherwise"},
       Type::kUint, {}},
      {{"pretrain_seed", "11", "seed of the pretraining episode stream"}, Type::kUint, {}},

      {{"method", "grerank", "grerank, adist, emdr, pdist, loop or freeweights"}, Type::kChoice,
       {"grerank", "adist", "emdr", "pdist", "loop", "freeweights"}},
      {{"tau", "0.5", "relaxation temperature"}, Type::kDouble, {}},
      {{"kappa", "1.0", "score scale inside the perturbation"}, Type::kDouble, {}},
      {{"k", "5", "relaxed subset size"}, Type::kUint, {}},
      {{"noise", "true", "add Gumbel noise; false runs the noiseless ablation"}, Type::kBool, {}},
      {{"lr", "0.001", "reranker learning rate"}, Type::kDouble, {}},
      {{"steps", "2000", "reranker training steps"}, Type::kUint, {}},
      {{"batch", "8", "episodes per reranker step"}, Type::kUint, {}},
      {{"eval_interval", "100", "steps between evaluation records"}, Type::kUint, {}},
      {{"eval_k", "5", "cutoff for Recall@k, NDCG@k and the generator setting"}, Type::kUint, {}},
      {{"mining_episodes", "0", "training episodes used for mining metrics; 0 uses all"}, Type::kUint, {}},
      {{"generator_eval", "false", "measure exact match at the final evaluation"}, Type::kBool, {}},
      {{"freeweights_episode", "0", "training episode bound to the free weights"}, Type::kUint, {}},
      {{"noise_seed", "2", "seed for Gumbel noise"}, Type::kUint, {}},
      {{"init_seed", "3", "scorer initialization seed"}, Type::kUint, {}},
      {{"scorer_dim", "32", "scorer embedding width"}, Type::kUint, {}},
      {{"scorer_hidden", "32", "scorer hidden width"}, Type::kUint, {}},
      {{"eval_scorer", "model", "scores used by eval: model or oracle"}, Type::kChoice, {"model", "oracle"}},

      {{"sweep_taus", "0.1,0.5,1.0,2.0", "temperatures of the sweep grid"}, Type::kDoubles, {}},
      {{"sweep_kappas", "0.1,0.5,1.0,2.0,5.0", "scales of the sweep grid"}, Type::kDoubles, {}},
      {{"sweep_seeds", "5", "noise seeds per sweep cell"}, Type::kUint, {}},
      {{"threads", "0", "worker threads for sweeps; 0 uses every core"}, Type::kUint, {}},

      {{"train_corpus", "train.jsonl", "training split, relative to the output directory"}, Type::kString, {}},
      {{"test_corpus", "test.jsonl", "held-out split, relative to the output directory"}, Type::kString, {}},
      {{"reader_params", "reader.bin", "reader parameter file"}, Type::kString, {}},
      {{"scorer_params", "scorer.bin", "scorer parameter file"}, Type::kString, {}},
      {{"records", "records.jsonl", "evaluation records"}, Type::kString, {}},
      {{"trajectory", "trajectory.csv", "per-step mask statistics"}, Type::kString, {}},
      {{"metrics", "metrics.json", "evaluation output of the eval command"}, Type::kString, {}},
  };
  return t;
}

const Key& lookup(const std::string& name) {
  for (const Key& k : table()) {
    if (k.info.name == name) return k;
  }
  throw ContractError("unknown config key '" + name + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double x;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ContractError("'" + v + "' is not a number");
  }
  if (used != v.size() || !std::isfinite(x)) throw ContractError("'" + v + "' is not a finite number");
  return x;
}

template <class T>
T to_integer(const std::string& v) {
  T x{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ContractError("'" + v + "' is not an integer");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("'" + v + "' is not a boolean");
}

std::vector<double> to_doubles(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item)));
  if (out.empty()) throw ContractError("empty list");
  return out;
}

void check(const Key& k, const std::string& v) {
  switch (k.type) {
    case Type::kString: break;
    case Type::kDouble: to_double(v); break;
    case Type::kInt: to_integer<std::int64_t>(v); break;
    case Type::kUint: to_integer<std::uint64_t>(v); break;
    case Type::kBool: to_bool(v); break;
    case Type::kDoubles: to_doubles(v); break;
    case Type::kChoice:
      if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
        throw ContractError("'" + v + "' is not a valid value for " + k.info.name);
      }
      break;
  }
}

}  // namespace

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> out = [] {
    std::vector<KeyInfo> v;
    for (const Key& k : table()) v.push_back(k.info);
    return v;
  }();
  return out;
}

ExperimentConfig::ExperimentConfig() {
  for (const Key& k : table()) values_[k.info.name] = k.info.default_value;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const Key& k = lookup(key);
  try {
    check(k, value);
  } catch (const ContractError& e) {
    throw ContractError(key + ": " + e.what());
  }
  values_[key] = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  lookup(key);
  return values_.at(key);
}

double ExperimentConfig::get_double(const std::string& key) const { return to_double(get(key)); }
std::int64_t ExperimentConfig::get_int(const std::string& key) const { return to_integer<std::int64_t>(get(key)); }
std::uint64_t ExperimentConfig::get_uint(const std::string& key) const { return to_integer<std::uint64_t>(get(key)); }
bool ExperimentConfig::get_bool(const std::string& key) const { return to_bool(get(key)); }
std::vector<double> ExperimentConfig::get_doubles(const std::string& key) const { return to_doubles(get(key)); }

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", number);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      c.set(key, value);
    } catch (const ContractError& e) {
      throw ParseError(e.what(), number);
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse(in);
}

void ExperimentConfig::override_seeds(std::uint64_t seed) {
  const char* names[] = {"data_seed", "reader_seed", "pretrain_seed", "noise_seed", "init_seed"};
  for (std::size_t i = 0; i < std::size(names); ++i) values_[names[i]] = std::to_string(seed * 10 + i);
}

void ExperimentConfig::write(std::ostream& out) const {
  for (const Key& k : table()) out << k.info.name << " = " << values_.at(k.info.name) << "  # " << k.info.doc << '\n';
}

data::TaskSpec ExperimentConfig::task() const {
  data::TaskSpec t;
  t.task = get("task") == "single_hop" ? data::Task::kSingleHop : data::Task::kMultiHop;
  t.candidates = get_uint("candidates");
  t.chain_len = get_uint("chain_len");
  t.decoys = get_uint("decoys");
  t.vocab = data::Vocabulary(get_uint("vocab_size"), get_uint("entities"), get_uint("relations"));
  return t;
}

reader::ReaderConfig ExperimentConfig::reader() const {
  const data::TaskSpec t = task();
  reader::ReaderConfig r;
  r.vocab_size = t.vocab.size();
  r.embed_dim = get_uint("reader_dim");
  r.max_doc_len = t.max_doc_len();
  r.max_query_len = t.max_query_len();
  r.max_answer_len = t.max_answer_len();
  r.window = get_uint("reader_window");
  const std::uint64_t hops = get_uint("reader_hops");
  r.hops = hops ? hops : (t.task == data::Task::kSingleHop ? 1 : t.chain_len);
  r.seed = get_uint("reader_seed");
  r.copy_init = get_double("copy_init");
  r.validate();
  return r;
}

train::PretrainConfig ExperimentConfig::pretrain() const {
  const bool single = get("task") == "single_hop";
  train::PretrainConfig p;
  p.steps = get_uint("pretrain_steps");
  p.batch = get_uint("pretrain_batch");
  p.lr = get_double("pretrain_lr");
  const std::string mask = get("pretrain_mask");
  if (mask == "gold_plus") {
    p.mask = train::PretrainMask::kGoldPlus;
  } else {
    p.mask = mask == "gold" || (mask == "auto" && single) ? train::PretrainMask::kGold : train::PretrainMask::kFull;
  }
  p.context = get_uint("pretrain_context");
  const std::uint64_t n = get_uint("pretrain_candidates");
  p.candidates = n ? n : (single ? 0 : 6);
  p.seed = get_uint("pretrain_seed");
  return p;
}

std::vector<data::Episode> ExperimentConfig::train_split() const {
  return data::generate_split(task(), get_uint("data_seed"), get_uint("train_episodes"));
}

std::vector<data::Episode> ExperimentConfig::test_split() const {
  return data::generate_split(task(), get_uint("data_seed") ^ 0x9e3779b97f4a7c15ULL, get_uint("test_episodes"));
}

train::TrainConfig ExperimentConfig::training() const {
  train::TrainConfig c;
  c.method = train::parse_method(get("method"));
  c.gumbel.tau = get_double("tau");
  c.gumbel.kappa = get_double("kappa");
  c.gumbel.k = get_uint("k");
  c.noise = get_bool("noise");
  c.lr = get_double("lr");
  c.steps = get_uint("steps");
  c.batch = get_uint("batch");
  c.eval_interval = get_uint("eval_interval");
  c.eval_k = get_uint("eval_k");
  c.mining_episodes = get_uint("mining_episodes");
  c.generator_eval = get_bool("generator_eval");
  c.free_weights_episode = get_uint("freeweights_episode");
  c.data_seed = get_uint("data_seed");
  c.noise_seed = get_uint("noise_seed");
  c.init_seed = get_uint("init_seed");
  c.scorer.vocab_size = get_uint("vocab_size");
  c.scorer.embed_dim = get_uint("scorer_dim");
  c.scorer.hidden = get_uint("scorer_hidden");
  c.scorer.seed = c.init_seed;
  c.validate();
  return c;
}

}  // namespace grerank::config
