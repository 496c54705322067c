#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grerank/config.hpp"
#include "grerank/error.hpp"
#include "grerank/reader.hpp"
#include "grerank/scorer.hpp"
#include "grerank/synthdata.hpp"
#include "grerank/trainer.hpp"

namespace fs = std::filesystem;
using grerank::config::ExperimentConfig;
namespace data = grerank::data;
namespace reader = grerank::reader;
namespace scorer = grerank::scorer;
namespace train = grerank::train;

namespace {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out = "run";
  std::int64_t seed = -1;
  bool quiet = false;
};

struct Context {
  ExperimentConfig config;
  fs::path out;
  bool quiet = false;

  fs::path path(const std::string& key) const { return out / config.get(key); }

  fs::path input(const std::string& key) const {
    fs::path p = path(key);
    if (!fs::exists(p)) throw IoError("missing input file " + p.string());
    return p;
  }

  fs::path suffixed(const std::string& key, const std::string& suffix) const {
    const fs::path p = path(key);
    return p.parent_path() / (p.stem().string() + suffix + p.extension().string());
  }

  void log(const std::string& line) const {
    if (!quiet) std::cout << line << '\n';
  }
};

void warn_seed_collisions(const ExperimentConfig& c) {
  std::map<std::uint64_t, std::string> seen;
  for (const char* key : {"data_seed", "reader_seed", "pretrain_seed", "noise_seed", "init_seed"}) {
    const auto [it, fresh] = seen.emplace(c.get_uint(key), key);
    if (!fresh) std::cerr << "warning: " << key << " equals " << it->second << '\n';
  }
}

Context prepare(const Options& o, const std::string& command) {
  Context ctx;
  ctx.config = ExperimentConfig::load(o.config);
  if (o.seed >= 0) ctx.config.override_seeds(static_cast<std::uint64_t>(o.seed));
  warn_seed_collisions(ctx.config);
  ctx.out = o.out;
  ctx.quiet = o.quiet;
  fs::create_directories(ctx.out);
  std::ofstream resolved(ctx.out / (command + ".config"));
  if (!resolved) throw IoError("cannot write to " + ctx.out.string());
  ctx.config.write(resolved);
  return ctx;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

void write_run(const train::TrainResult& r, const fs::path& records, const fs::path& trajectory) {
  auto rec = open_out(records);
  for (const auto& x : r.records) rec << train::to_json(x) << '\n';
  auto traj = open_out(trajectory);
  train::write_trajectory_csv(r.trajectory, traj);
}

struct Inputs {
  std::vector<data::Episode> train_split;
  std::vector<data::Episode> test_split;
  reader::Reader reader;
};

Inputs load_inputs(const Context& ctx) {
  return {data::read_corpus(ctx.input("train_corpus")), data::read_corpus(ctx.input("test_corpus")),
          reader::load_reader(ctx.input("reader_params"))};
}

train::TrainResult run_training(const Context& ctx, const train::TrainConfig& cfg, const Inputs& in) {
  return train::train(cfg, in.train_split, in.test_split, in.reader,
                      [&](const train::RunRecord& r) { ctx.log(train::to_json(r)); });
}

nlohmann::ordered_json metrics_json(const train::SettingMetrics& m) {
  nlohmann::ordered_json j{{"recall", m.recall}, {"ndcg", m.ndcg}, {"mrr", m.mrr}};
  if (m.indirect_recall >= 0.0) j["indirect_recall"] = m.indirect_recall;
  return j;
}

void write_json(const fs::path& p, const nlohmann::ordered_json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

void cmd_gen(const Context& ctx) {
  const auto train_split = ctx.config.train_split();
  const auto test_split = ctx.config.test_split();
  data::write_corpus(train_split, ctx.path("train_corpus"));
  data::write_corpus(test_split, ctx.path("test_corpus"));
  ctx.log("train " + std::to_string(train_split.size()) + " test " + std::to_string(test_split.size()));
}

void cmd_pretrain(const Context& ctx) {
  reader::Reader r(ctx.config.reader());
  const auto pc = ctx.config.pretrain();
  train::pretrain(r, ctx.config.task(), pc, [&](const train::PretrainRecord& rec) {
    if (rec.step % 100 == 0 || rec.step == pc.steps) {
      ctx.log(nlohmann::ordered_json{{"step", rec.step}, {"loss", rec.loss}}.dump());
    }
  });
  reader::save(r, ctx.path("reader_params"));
}

void cmd_train(const Context& ctx) {
  const Inputs in = load_inputs(ctx);
  const auto result = run_training(ctx, ctx.config.training(), in);
  write_run(result, ctx.path("records"), ctx.path("trajectory"));
  if (result.scorer) scorer::save(*result.scorer, ctx.path("scorer_params"));
  nlohmann::ordered_json summary{{"best", nlohmann::ordered_json::parse(train::to_json(result.best))},
                                 {"last", nlohmann::ordered_json::parse(train::to_json(result.last))}};
  write_json(ctx.suffixed("records", "_summary").replace_extension(".json"), summary);
}

std::vector<std::vector<double>> oracle_scores(const std::vector<data::Episode>& eps) {
  std::vector<std::vector<double>> out;
  for (const auto& ep : eps) {
    std::vector<double> s(ep.docs.size(), 0.0);
    for (std::size_t g : ep.gold) s[g] = 1.0;
    out.push_back(std::move(s));
  }
  return out;
}

void cmd_eval(const Context& ctx) {
  const Inputs in = load_inputs(ctx);
  const std::size_t k = ctx.config.get_uint("eval_k");
  std::vector<std::vector<double>> mining, held_out;
  if (ctx.config.get("eval_scorer") == "oracle") {
    mining = oracle_scores(in.train_split);
    held_out = oracle_scores(in.test_split);
  } else {
    const auto s = scorer::load_scorer(ctx.input("scorer_params"));
    mining = train::score_episodes(s, in.train_split);
    held_out = train::score_episodes(s, in.test_split);
  }
  nlohmann::ordered_json j{
      {"k", k},
      {"mining", metrics_json(train::evaluate_scores(mining, in.train_split, k))},
      {"reranker", metrics_json(train::evaluate_scores(held_out, in.test_split, k))},
      {"generator", {{"exact_match", train::exact_match(in.reader, held_out, in.test_split, k)}}},
  };
  write_json(ctx.path("metrics"), j);
  ctx.log(j.dump());
}

double terminal_max_weight(const train::TrainResult& r) {
  return r.trajectory.empty() ? 0.0 : r.trajectory.back().max_weight;
}

void cmd_ablate_gumbel(const Context& ctx) {
  const Inputs in = load_inputs(ctx);
  auto cfg = ctx.config.training();
  nlohmann::ordered_json j;
  for (const bool noise : {true, false}) {
    cfg.noise = noise;
    const std::string tag = noise ? "_noise" : "_no_noise";
    const auto result = run_training(ctx, cfg, in);
    write_run(result, ctx.suffixed("records", tag), ctx.suffixed("trajectory", tag));
    j[noise ? "noise" : "no_noise"] = {{"initial_max_weight", result.trajectory.front().max_weight},
                                       {"terminal_max_weight", terminal_max_weight(result)}};
  }
  j["difference"] =
      j["noise"]["terminal_max_weight"].get<double>() - j["no_noise"]["terminal_max_weight"].get<double>();
  write_json(ctx.suffixed("records", "_ablation").replace_extension(".json"), j);
  ctx.log(j.dump());
}

std::string cell_name(const train::SweepCell& c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "tau%g_kappa%g_seed%llu", c.tau, c.kappa,
                static_cast<unsigned long long>(c.noise_seed));
  return buf;
}

void cmd_sweep(const Context& ctx) {
  const Inputs in = load_inputs(ctx);
  const auto base = ctx.config.training();
  const auto taus = ctx.config.get_doubles("sweep_taus");
  const auto kappas = ctx.config.get_doubles("sweep_kappas");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < ctx.config.get_uint("sweep_seeds"); ++i) seeds.push_back(base.noise_seed + i);
  const auto cells = train::sweep(base, taus, kappas, seeds, in.train_split, in.test_split, in.reader,
                                  ctx.config.get_uint("threads"));
  const fs::path dir = ctx.out / "sweep";
  auto records = open_out(ctx.suffixed("records", "_sweep"));
  for (const auto& c : cells) {
    const std::string name = cell_name(c);
    auto traj = open_out(dir / (name + ".csv"));
    train::write_trajectory_csv(c.result.trajectory, traj);
    nlohmann::ordered_json j{{"tau", c.tau},
                             {"kappa", c.kappa},
                             {"noise_seed", c.noise_seed},
                             {"terminal_max_weight", terminal_max_weight(c.result)},
                             {"last", nlohmann::ordered_json::parse(train::to_json(c.result.last))}};
    records << j.dump() << '\n';
    ctx.log(name + " " + std::to_string(terminal_max_weight(c.result)));
  }
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const grerank::ParseError*>(&e)) return "parse";
  if (dynamic_cast<const grerank::DomainError*>(&e)) return "domain";
  if (dynamic_cast<const grerank::ContractError*>(&e)) return "contract";
  if (dynamic_cast<const grerank::DivergenceError*>(&e)) return "divergence";
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "runtime";
}

void fail(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"G-Rerank experiments on synthetic retrieval tasks"};
  app.require_subcommand(1);
  Options opts;

  using Command = void (*)(const Context&);
  const std::vector<std::pair<std::string, Command>> commands{
      {"gen", cmd_gen},     {"pretrain", cmd_pretrain},           {"train", cmd_train},
      {"eval", cmd_eval},   {"ablate-gumbel", cmd_ablate_gumbel}, {"sweep", cmd_sweep},
  };
  const std::map<std::string, std::string> help{
      {"gen", "write training and held-out corpora"},
      {"pretrain", "pretrain the reader and save its parameters"},
      {"train", "train a reranker against the frozen reader"},
      {"eval", "mining, reranker and generator metrics of a saved scorer"},
      {"ablate-gumbel", "paired runs with and without Gumbel noise"},
      {"sweep", "temperature and scale grid"},
  };
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", opts.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "output directory")->capture_default_str();
    sub->add_option("--seed", opts.seed, "replace every seed with ones derived from N")->check(CLI::NonNegativeNumber);
    sub->add_flag("--quiet", opts.quiet, "suppress progress output");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  for (const auto& [name, fn] : commands) {
    if (!app.got_subcommand(name)) continue;
    try {
      fn(prepare(opts, name));
    } catch (const std::exception& e) {
      fail(error_kind(e), e.what());
      return 1;
    }
  }
  return 0;
}
