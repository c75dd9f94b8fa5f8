#include "bpsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "bpsim/checkpoint.hpp"

namespace bpsim {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path bundled_suite_path() { return fs::path(BPSIM_DATA_DIR) / "paper_suite.json"; }

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::string git_blob_hash(std::string_view content) {
  const std::string prefix = fmt::format("blob {}", content.size());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                             &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx.get(), prefix.data(), prefix.size() + 1);  // includes '\0'
  EVP_DigestUpdate(ctx.get(), content.data(), content.size());
  EVP_DigestFinal_ex(ctx.get(), digest, &length);
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace {

/// Thrown for anything that maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_atomically(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError(fmt::format("cannot write '{}'", tmp.string()));
    out << text;
  }
  fs::rename(tmp, path);
}

struct ResolvedRun {
  BusinessProcessSuite suite;
  std::string suite_hash;
  EngineConfig engine;
  DqnConfig dqn;
};

ResolvedRun resolve(const RunOptions& options, int default_episodes, int default_steps) {
  ResolvedRun r;
  const fs::path suite_path =
      options.suite_path.empty() ? bundled_suite_path() : options.suite_path;
  if (!fs::exists(suite_path))
    throw UsageError(fmt::format("suite file '{}' does not exist", suite_path.string()));
  const std::string text = read_file(suite_path);
  try {
    r.suite = load_suite(text);
  } catch (const std::exception& e) {
    throw UsageError(fmt::format("suite '{}': {}", suite_path.string(), e.what()));
  }
  r.suite_hash = git_blob_hash(text);

  r.dqn.episodes = default_episodes;
  r.dqn.steps = default_steps;

  if (!options.config_path.empty()) {
    json cfg;
    try {
      cfg = json::parse(read_file(options.config_path), nullptr, true, true);
      if (cfg.contains("engine")) {
        const auto& e = cfg["engine"];
        r.engine.arrival_probability = e.value("arrival_probability", r.engine.arrival_probability);
        r.engine.enabled_duration_cap = e.value("enabled_duration_cap", r.engine.enabled_duration_cap);
        if (e.contains("encoding")) r.engine.encoding = parse_encoding(e["encoding"].get<std::string>());
      }
      if (cfg.contains("dqn")) {
        const auto& d = cfg["dqn"];
        r.dqn.episodes = d.value("episodes", r.dqn.episodes);
        r.dqn.steps = d.value("steps", r.dqn.steps);
        r.dqn.batch_size = d.value("batch_size", r.dqn.batch_size);
        r.dqn.discount = d.value("discount", r.dqn.discount);
        r.dqn.target_sync_period = d.value("target_sync_period", r.dqn.target_sync_period);
        r.dqn.epsilon_start = d.value("epsilon_start", r.dqn.epsilon_start);
        r.dqn.epsilon_end = d.value("epsilon_end", r.dqn.epsilon_end);
        r.dqn.memory_fraction = d.value("memory_fraction", r.dqn.memory_fraction);
        r.dqn.optimizer.learning_rate = d.value("learning_rate", r.dqn.optimizer.learning_rate);
      }
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(fmt::format("config '{}': {}", options.config_path.string(), e.what()));
    }
  }

  if (options.episodes) r.dqn.episodes = *options.episodes;
  if (options.steps) r.dqn.steps = *options.steps;
  if (options.arrival_probability) r.engine.arrival_probability = *options.arrival_probability;
  if (options.cap) r.engine.enabled_duration_cap = *options.cap;
  try {
    if (options.encoding) r.engine.encoding = parse_encoding(*options.encoding);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  r.engine.seed = options.seed;
  r.dqn.seed = options.seed;
  if (r.dqn.episodes < 0 || r.dqn.steps < 0)
    throw UsageError("episodes and steps must be non-negative");
  return r;
}

json config_json(const ResolvedRun& r) {
  return {{"engine",
           {{"arrival_probability", r.engine.arrival_probability},
            {"enabled_duration_cap", r.engine.enabled_duration_cap},
            {"encoding", std::string(encoding_name(r.engine.encoding))},
            {"seed", r.engine.seed}}},
          {"dqn",
           {{"episodes", r.dqn.episodes},
            {"steps", r.dqn.steps},
            {"batch_size", r.dqn.batch_size},
            {"discount", r.dqn.discount},
            {"target_sync_period", r.dqn.target_sync_period},
            {"epsilon_start", r.dqn.epsilon_start},
            {"epsilon_end", r.dqn.epsilon_end},
            {"memory_fraction", r.dqn.memory_fraction},
            {"replay_capacity", r.dqn.replay_capacity()},
            {"learning_rate", r.dqn.optimizer.learning_rate},
            {"adam_beta1", r.dqn.optimizer.beta1},
            {"adam_beta2", r.dqn.optimizer.beta2},
            {"adam_epsilon", r.dqn.optimizer.epsilon},
            {"seed", r.dqn.seed}}}};
}

void write_manifest(const fs::path& dir, const std::string& command, const RunOptions& options,
                    const ResolvedRun& r, const std::vector<fs::path>& outputs, double seconds,
                    json extra = json::object()) {
  json m;
  m["command"] = command;
  m["config"] = config_json(r);
  m["seed"] = options.seed;
  m["suite_path"] = (options.suite_path.empty() ? bundled_suite_path() : options.suite_path).string();
  m["suite_hash"] = r.suite_hash;
  m["outputs"] = json::array();
  for (const auto& p : outputs) m["outputs"].push_back(p.string());
  m["wall_clock_seconds"] = seconds;
  m.update(extra);
  write_atomically(dir / "manifest.json", m.dump(2) + "\n");
}

std::string format_training_csv(const TrainingRun& run) {
  std::string csv = "episode,cum_reward,mean_loss,epsilon_end\n";
  for (const auto& s : run.episodes)
    csv += fmt::format("{},{},{},{}\n", s.episode, s.cum_reward, s.mean_loss, s.epsilon_end);
  return csv;
}

/// Trains one run into `dir`; returns the exit code.
int train_one(const RunOptions& options, ResolvedRun r, std::uint64_t seed, const fs::path& dir,
              std::ostream& out, std::mutex& out_mutex) {
  const auto start = std::chrono::steady_clock::now();
  r.engine.seed = seed;
  r.dqn.seed = seed;
  fs::create_directories(dir);
  const TrainingRun run = train(r.suite, r.engine, r.dqn, dir);
  write_atomically(dir / "train.csv", format_training_csv(run));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  RunOptions seeded = options;
  seeded.seed = seed;
  std::vector<fs::path> outputs{dir / "train.csv", run.last_checkpoint};
  if (run.best_episode >= 0) outputs.push_back(run.best_checkpoint);
  write_manifest(dir, "train", seeded, r, outputs, seconds,
                 {{"failed", run.failed},
                  {"failure", run.failure},
                  {"best_episode", run.best_episode},
                  {"best_reward", run.best_reward}});
  std::lock_guard lock(out_mutex);
  if (run.failed) {
    out << fmt::format("run {} diverged: {}\n", dir.string(), run.failure);
    return kExitDiverged;
  }
  std::vector<double> rewards;
  for (const auto& s : run.episodes) rewards.push_back(s.cum_reward);
  out << fmt::format("trained {} episodes into {} (best episode {} reward {}, last-10 mean {:.3f})\n",
                     run.episodes.size(), dir.string(), run.best_episode, run.best_reward,
                     mean(std::vector<double>(rewards.end() - std::min<std::ptrdiff_t>(10, std::ssize(rewards)),
                                              rewards.end())));
  return kExitOk;
}

Policy make_policy(const std::string& name, const RunOptions& options, const Engine& engine) {
  if (name == "fifo") return fifo_policy();
  if (name == "spt") return spt_policy();
  if (name == "random") return random_policy(derive_seed(options.seed, 0x52414e44ULL));
  if (name == "dqn" || name == "checkpoint") {
    if (options.weights.empty()) throw UsageError("policy 'dqn' needs --weights");
    try {
      return greedy_policy(load_params(
          options.weights, q_network_shape(engine.state_width(), engine.action_space().size())));
    } catch (const CheckpointError& e) {
      throw UsageError(e.what());
    }
  }
  throw UsageError(fmt::format("unknown policy '{}' (expected fifo, spt, random or dqn)", name));
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

fs::path require_out_dir(const RunOptions& options) {
  if (options.out_dir.empty()) throw UsageError("--out is required");
  fs::create_directories(options.out_dir);
  return options.out_dir;
}

}  // namespace

int cmd_train(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ResolvedRun r = resolve(options, 600, 400);
    if (r.dqn.episodes == 0 || r.dqn.steps == 0)
      throw UsageError("training needs at least one episode and one step");
    try {
      r.dqn.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (options.runs < 1) throw UsageError("--runs must be at least 1");
    const fs::path root = require_out_dir(options);
    std::mutex out_mutex;
    if (options.runs == 1) return train_one(options, r, options.seed, root, out, out_mutex);

    std::vector<int> codes(static_cast<std::size_t>(options.runs), kExitOk);
    std::atomic<int> next{0};
    const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                             static_cast<unsigned>(options.runs)));
    std::vector<std::thread> pool;
    std::vector<std::string> errors(static_cast<std::size_t>(options.runs));
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < options.runs; i = next++) {
          const auto dir = root / fmt::format("run_{:03d}", i);
          try {
            codes[static_cast<std::size_t>(i)] =
                train_one(options, r, options.seed + static_cast<std::uint64_t>(i), dir, out,
                          out_mutex);
          } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
            codes[static_cast<std::size_t>(i)] = kExitInvalid;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (!e.empty()) err << "error: " << e << "\n";
    return *std::max_element(codes.begin(), codes.end());
  });
}

int cmd_eval(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto start = std::chrono::steady_clock::now();
    const ResolvedRun r = resolve(options, 100, 400);
    const fs::path dir = require_out_dir(options);
    const Engine probe(r.suite, r.engine);
    const std::string name = options.policy.empty() ? "fifo" : options.policy;
    const Policy policy = make_policy(name, options, probe);
    const auto rewards = evaluate(policy, r.suite, r.engine, r.dqn.episodes, r.dqn.steps);

    std::string csv = "episode,cum_reward\n";
    for (std::size_t e = 0; e < rewards.size(); ++e) csv += fmt::format("{},{}\n", e, rewards[e]);
    write_atomically(dir / "eval.csv", csv);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(dir, "eval", options, r, {dir / "eval.csv"}, seconds,
                   {{"policy", name}, {"weights", options.weights.string()}});
    out << fmt::format("policy={} episodes={} steps={} median={} mean={}\n", name, rewards.size(),
                       r.dqn.steps, median(rewards), mean(rewards));
    return kExitOk;
  });
}

int cmd_compare(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto start = std::chrono::steady_clock::now();
    const ResolvedRun r = resolve(options, 100, 5000);
    if (options.weights.empty()) throw UsageError("compare needs --weights");
    const fs::path dir = require_out_dir(options);
    const Engine probe(r.suite, r.engine);

    const std::vector<std::string> names{"dqn", "fifo", "spt"};
    std::vector<std::vector<double>> results;
    for (const auto& name : names)
      results.push_back(evaluate(make_policy(name, options, probe), r.suite, r.engine,
                                 r.dqn.episodes, r.dqn.steps));

    std::string csv = "episode,dqn,fifo,spt\n";
    for (int e = 0; e < r.dqn.episodes; ++e) {
      const auto i = static_cast<std::size_t>(e);
      csv += fmt::format("{},{},{},{}\n", e, results[0][i], results[1][i], results[2][i]);
    }
    write_atomically(dir / "compare.csv", csv);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json summary = json::object();
    out << fmt::format("{:<6} {:>12} {:>12}\n", "policy", "mean", "median");
    for (std::size_t p = 0; p < names.size(); ++p) {
      summary[names[p]] = {{"mean", mean(results[p])}, {"median", median(results[p])}};
      out << fmt::format("{:<6} {:>12.3f} {:>12.3f}\n", names[p], mean(results[p]),
                         median(results[p]));
    }
    write_manifest(dir, "compare", options, r, {dir / "compare.csv"}, seconds,
                   {{"weights", options.weights.string()}, {"summary", summary}});
    return kExitOk;
  });
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Business-process resource allocation: simulator, Double DQN and baselines"};
  app.require_subcommand(1);
  RunOptions options;
  std::string suite, out_dir, weights, config;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--suite", suite, "Suite-config JSON (default: bundled paper_suite.json)");
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--config", config, "JSON file with engine/dqn overrides");
    sub->add_option("--seed", options.seed, "Seed");
    sub->add_option("--episodes", options.episodes, "Episodes");
    sub->add_option("--steps", options.steps, "Steps per episode");
    sub->add_option("--arrival-prob", options.arrival_probability, "Per-step arrival probability");
    sub->add_option("--cap", options.cap, "Enabled-set mean-duration cap");
    sub->add_option("--encoding", options.encoding, "State encoding: std|a1|a10|a2");
  };

  auto* train_cmd = app.add_subcommand("train", "Train Double DQN agents");
  add_common(train_cmd);
  train_cmd->add_option("--runs", options.runs, "Independent runs (seeds seed..seed+N-1)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate one policy");
  add_common(eval_cmd);
  eval_cmd->add_option("--policy", options.policy, "fifo|spt|random|dqn");
  eval_cmd->add_option("--weights", weights, "Checkpoint for --policy dqn");

  auto* compare_cmd = app.add_subcommand("compare", "Paired DQN / FIFO / SPT comparison");
  add_common(compare_cmd);
  compare_cmd->add_option("--weights", weights, "Checkpoint of the DQN policy")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }
  options.suite_path = suite;
  options.out_dir = out_dir;
  options.weights = weights;
  options.config_path = config;

  if (train_cmd->parsed()) return cmd_train(options, out, err);
  if (eval_cmd->parsed()) return cmd_eval(options, out, err);
  return cmd_compare(options, out, err);
}

}  // namespace bpsim
