// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.
//
//   acceptance            all criteria
//   acceptance 3 5 8      a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bpsim/baselines.hpp"
#include "bpsim/dqn.hpp"
#include "bpsim/engine.hpp"
#include "bpsim/harness.hpp"
#include "engine_invariants.hpp"
#include "golden_trace.hpp"
#include "oracles.hpp"
#include "reference_engine.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;
using namespace bpsim;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("bpsim_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << fmt::format("bpsim {} -> {}\n{}", args[0], code, err.str());
  return code;
}

/// Columns of compare.csv (dqn, fifo, spt).
std::vector<std::vector<double>> read_compare(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> cols(3);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (auto& c : cols) {
      std::getline(ss, cell, ',');
      c.push_back(std::stod(cell));
    }
  }
  return cols;
}

Outcome engine_invariants() {
  const auto suite = testing::paper_suite();
  const auto t0 = Clock::now();
  Rng meta(2024);
  std::int64_t steps = 0;
  for (int run = 0; run < 100; ++run) {
    EngineConfig cfg;
    cfg.seed = meta();
    Engine engine(suite, cfg);
    Rng rng(meta());
    const int actions = engine.action_space().size();
    double reward_sum = 0.0;
    for (int i = 0; i < 10'000; ++i, ++steps) {
      const auto r = engine.step(static_cast<int>(uniform_int(rng, 0, actions - 1)));
      reward_sum += r.reward;
      const auto failure = testing::check_engine_invariants(engine, r.state, reward_sum);
      if (!failure.empty())
        return {false, fmt::format("run {} step {}: {}", run, i, failure)};
    }
  }
  const double secs = seconds_since(t0);
  return {secs < 60.0, fmt::format("{} steps, 0 violations, {:.1f} s (limit 60 s)", steps, secs)};
}

Outcome golden_trace() {
  std::ifstream in(testing::golden_trace_path());
  if (!in) return {false, "missing " + testing::golden_trace_path()};
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  if (lines.size() != 50) return {false, fmt::format("{} trace lines, expected 50", lines.size())};

  EngineConfig cfg;
  cfg.arrival_probability = testing::kGoldenArrival;
  cfg.enabled_duration_cap = testing::kGoldenCap;
  cfg.seed = testing::kGoldenSeed;
  Engine engine(testing::paper_suite(), cfg);
  const auto script = testing::golden_script();
  for (std::size_t i = 0; i < script.size(); ++i) {
    const auto r = engine.step(script[i]);
    const auto got = testing::format_snapshot(static_cast<int>(i), testing::snapshot_of(engine, r.reward));
    if (got != lines[i]) return {false, fmt::format("step {}: got '{}' want '{}'", i, got, lines[i])};
  }
  return {true, "50 steps match"};
}

Outcome gradients() {
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = testing::check_gradients(NetworkShape{4, {2, 2}, 3}, seed);
    checked += r.parameters_checked;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      where = r.worst_tensor;
    }
  }
  return {worst < 1e-4,
          fmt::format("{} parameters, max relative error {:.2e} ({}) < 1e-4", checked, worst, where)};
}

std::vector<Experience> random_batch(Rng& rng, int n, int width) {
  std::vector<Experience> batch(static_cast<std::size_t>(n));
  for (auto& e : batch) {
    for (int i = 0; i < width; ++i) {
      e.state.push_back(2.0 * uniform01(rng) - 1.0);
      e.next_state.push_back(2.0 * uniform01(rng) - 1.0);
    }
    e.action = static_cast<int>(uniform_int(rng, 0, 24));
    e.reward = std::floor(3.0 * uniform01(rng));
  }
  return batch;
}

Outcome targets() {
  const NetworkShape shape{11, {32, 32}, 25};
  double worst = 0.0;
  bool zero_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(5000 + static_cast<std::uint64_t>(trial));
    auto online = NetworkParams<double>::he_uniform(shape, rng);
    auto target = NetworkParams<double>::he_uniform(shape, rng);
    testing::randomize_norm_stats(online, rng);
    testing::randomize_norm_stats(target, rng);
    const auto batch = random_batch(rng, 1 + trial % 32, shape.input);
    std::vector<const Experience*> ptrs;
    for (const auto& e : batch) ptrs.push_back(&e);

    const auto y = compute_targets<double>(ptrs, online, target, 0.99);
    const auto want = testing::reference_targets(batch, online, target, 0.99);
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - want[i]));

    const auto y0 = compute_targets<double>(ptrs, online, target, 0.0);
    for (std::size_t i = 0; i < y0.size(); ++i) zero_exact = zero_exact && y0[i] == batch[i].reward;
  }
  return {worst < 1e-6 && zero_exact,
          fmt::format("100 batches, max |diff| {:.2e} < 1e-6; zero discount exact: {}", worst,
                      zero_exact ? "yes" : "no")};
}

Outcome epsilon_schedule() {
  const DqnConfig cfg;
  const std::vector<std::int64_t> steps{0, 12000, 24000, 1'000'000};
  const std::vector<double> want{1.0, 0.55, 0.1, 0.1};
  std::string got;
  bool ok = cfg.episodes == 600 && cfg.steps == 400;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double e = epsilon_at(steps[i], cfg);
    ok = ok && e == want[i];
    got += fmt::format("{}{}", i ? ", " : "", e);
  }
  return {ok, "epsilon at {0, 12000, 24000, 1e6} = {" + got + "}"};
}

Outcome replay_memory() {
  const DqnConfig cfg;
  const auto capacity = cfg.replay_capacity();
  const auto formula = static_cast<std::size_t>(std::floor(cfg.episodes * cfg.steps * 0.1));
  const std::size_t k = 1234;
  ReplayMemory memory(capacity);
  for (std::size_t i = 0; i < capacity + k; ++i)
    memory.push(Experience{{}, 0, static_cast<double>(i), {}});
  std::set<double> present;
  for (std::size_t i = 0; i < memory.size(); ++i) present.insert(memory[i].reward);
  bool oldest_gone = true;
  for (std::size_t i = 0; i < k; ++i) oldest_gone = oldest_gone && !present.count(static_cast<double>(i));
  const bool ok = capacity == formula && memory.size() == capacity && oldest_gone &&
                  present.size() == capacity;
  return {ok, fmt::format("capacity {} (formula {}), size after +{} = {}, oldest {} gone: {}",
                          capacity, formula, k, memory.size(), k, oldest_gone ? "yes" : "no")};
}

bool valid_in(const PrivilegedView& v, const Action& a) {
  if (a.is_noop()) return true;
  const bool free = std::find(v.free_resources.begin(), v.free_resources.end(), a.resource) !=
                    v.free_resources.end();
  const bool waiting = std::any_of(v.enabled.begin(), v.enabled.end(),
                                   [&](const auto& e) { return e.task == a.task; });
  return free && waiting && v.eligibility.is_eligible(a.resource, a.task);
}

Outcome baselines() {
  const auto suite = testing::paper_suite();
  std::vector<const Task*> tasks;
  for (const auto& p : suite.processes)
    for (const auto& t : p.tasks) tasks.push_back(&t);
  Rng rng(31337);
  int invalid = 0, disagreements = 0, assigns = 0;
  for (int trial = 0; trial < 100'000; ++trial) {
    PrivilegedView v;
    v.eligibility = suite.eligibility;
    const int n = static_cast<int>(uniform_int(rng, 0, 8));
    for (int j = 0; j < n; ++j) {
      const Task* t = tasks[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(tasks.size()) - 1))];
      v.enabled.push_back({j * 4 + static_cast<std::int64_t>(uniform_int(rng, 0, 3)), t->id,
                           static_cast<std::int64_t>(uniform_int(rng, 0, 50)), t->mean_duration});
    }
    for (const auto& r : suite.resources)
      if (uniform01(rng) < 0.5) v.free_resources.push_back(r.id);

    for (auto rule : {&fifo_action, &spt_action}) {
      const Action a = rule(v);
      invalid += !valid_in(v, a);
      disagreements += !(rule(v) == a);
      assigns += !a.is_noop();
    }
  }
  return {invalid == 0 && disagreements == 0,
          fmt::format("1e5 views, {} assigns, {} invalid, {} disagreements", assigns, invalid,
                      disagreements)};
}

// Seeds of the directional experiment, fixed before any run.
constexpr std::uint64_t kTrainSeed = 1;
constexpr int kRuns = 5;
constexpr std::uint64_t kCompareSeed = 777;
// The loaded workload the bundled suite is meant to run under.
const std::vector<std::string> kWorkload{"--arrival-prob", "0.8", "--cap", "40"};

int cli_workload(std::vector<std::string> args) {
  args.insert(args.end(), kWorkload.begin(), kWorkload.end());
  return cli(args);
}

struct ExperimentState {
  bool trained = false;
  fs::path root;
  std::vector<std::vector<std::vector<double>>> compares;  // per run, dqn/fifo/spt
};

ExperimentState& experiment() {
  static ExperimentState state;
  return state;
}

bool run_experiment() {
  auto& s = experiment();
  if (s.trained) return true;
  s.root = scratch("directional");
  const auto t0 = Clock::now();
  if (cli_workload({"train", "--runs", std::to_string(kRuns), "--seed", std::to_string(kTrainSeed),
           "--out", (s.root / "train").string()}) != 0)
    return false;
  std::cerr << fmt::format("trained {} runs in {:.0f} s\n", kRuns, seconds_since(t0));
  for (int i = 0; i < kRuns; ++i) {
    const auto run = s.root / "train" / fmt::format("run_{:03d}", i);
    const auto out = s.root / fmt::format("compare_{:03d}", i);
    if (cli_workload({"compare", "--weights", (run / "best.ckpt").string(), "--episodes", "100",
                      "--steps", "400", "--seed", std::to_string(kCompareSeed), "--out", out.string()}) != 0)
      return false;
    s.compares.push_back(read_compare(out / "compare.csv"));
  }
  s.trained = true;
  return true;
}

Outcome directional() {
  if (!run_experiment()) return {false, "training or comparison failed"};
  int dqn_wins = 0;
  bool fifo_over_spt = true;
  std::string rows;
  for (int i = 0; i < kRuns; ++i) {
    const auto& c = experiment().compares[static_cast<std::size_t>(i)];
    const double d = median(c[0]), f = median(c[1]), sp = median(c[2]);
    dqn_wins += d >= f;
    fifo_over_spt = fifo_over_spt && f > sp;
    rows += fmt::format("{}run {}: dqn {} fifo {} spt {}", i ? "; " : "", i, d, f, sp);
  }
  return {dqn_wins >= 3 && fifo_over_spt,
          fmt::format("dqn >= fifo in {}/5 runs (need 3), fifo > spt in all: {} [{}]", dqn_wins,
                      fifo_over_spt ? "yes" : "no", rows)};
}

Outcome long_run() {
  if (!run_experiment()) return {false, "training or comparison failed"};
  // The best run is the one with the highest median DQN reward at 400 steps.
  int best = 0;
  for (int i = 1; i < kRuns; ++i)
    if (median(experiment().compares[static_cast<std::size_t>(i)][0]) >
        median(experiment().compares[static_cast<std::size_t>(best)][0]))
      best = i;
  const auto run = experiment().root / "train" / fmt::format("run_{:03d}", best);
  const auto out = experiment().root / "long";
  if (cli_workload({"compare", "--weights", (run / "best.ckpt").string(), "--episodes", "100",
                    "--steps", "5000", "--seed", std::to_string(kCompareSeed), "--out", out.string()}) != 0)
    return {false, "comparison failed"};
  const auto c = read_compare(out / "compare.csv");
  const double d = mean(c[0]), f = mean(c[1]), sp = mean(c[2]);
  return {d > f && f > sp,
          fmt::format("run {}: mean dqn {:.2f} > fifo {:.2f} > spt {:.2f}", best, d, f, sp)};
}

Outcome reproducibility() {
  const auto root = scratch("repro");
  auto pass = [&](const std::string& tag) {
    const auto dir = root / tag;
    return cli({"train", "--episodes", "8", "--steps", "200", "--seed", "42", "--out",
                (dir / "train").string()}) == 0 &&
           cli({"eval", "--policy", "dqn", "--weights", (dir / "train" / "last.ckpt").string(),
                "--episodes", "5", "--steps", "300", "--seed", "9", "--out",
                (dir / "eval").string()}) == 0 &&
           cli({"compare", "--weights", (dir / "train" / "best.ckpt").string(), "--episodes", "5",
                "--steps", "300", "--seed", "9", "--out", (dir / "compare").string()}) == 0;
  };
  if (!pass("a") || !pass("b")) return {false, "a command failed"};
  int compared = 0;
  for (const char* f : {"train/train.csv", "train/best.ckpt", "train/last.ckpt", "eval/eval.csv",
                        "compare/compare.csv"}) {
    if (slurp(root / "a" / f) != slurp(root / "b" / f)) return {false, fmt::format("{} differs", f)};
    ++compared;
  }
  return {true, fmt::format("{} artifacts bitwise identical across reruns", compared)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
      {"engine invariants", engine_invariants},
      {"golden trace", golden_trace},
      {"gradient check", gradients},
      {"double-DQN targets", targets},
      {"epsilon schedule", epsilon_schedule},
      {"replay memory", replay_memory},
      {"baseline validity", baselines},
      {"directional experiment", directional},
      {"long-run ordering", long_run},
      {"reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << fmt::format("{} {:2d} {}: {} ({:.1f} s)\n", o.pass ? "PASS" : "FAIL", id,
                             criteria[i].first, o.detail, seconds_since(t0))
              << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
