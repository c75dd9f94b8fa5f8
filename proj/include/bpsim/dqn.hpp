#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bpsim/engine.hpp"
#include "bpsim/network.hpp"
#include "bpsim/process_model.hpp"
#include "bpsim/random.hpp"

namespace bpsim {

struct DqnConfig {
  int episodes = 600;
  int steps = 400;
  int batch_size = 32;
  double discount = 0.99;
  std::int64_t target_sync_period = 10'000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  /// Replay capacity and epsilon anneal horizon are floor(E * M * fraction).
  double memory_fraction = 0.1;
  AdamConfig optimizer;
  std::uint64_t seed = 0;

  std::size_t replay_capacity() const;
  std::int64_t anneal_steps() const;
  /// Throws std::invalid_argument on non-positive sizes or eps_end > eps_start.
  void validate() const;
};

/// Linear from epsilon_start at step 0 to epsilon_end at anneal_steps(),
/// constant afterwards.
double epsilon_at(std::int64_t step, const DqnConfig& config);

struct Experience {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
};

/// Bounded FIFO of experiences; a push beyond capacity evicts the oldest.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Experience experience);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// 0 is the oldest retained item.
  const Experience& operator[](std::size_t i) const { return items_[i]; }

  /// Uniform sample of `count` distinct items. Requires count <= size().
  std::vector<const Experience*> sample(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Experience> items_;
};

/// Lowest index among the maxima.
template <typename Scalar>
int argmax(std::span<const Scalar> values);

/// Epsilon-greedy over the eval-mode Q-values. Draws one uniform number, plus
/// one uniform action index when exploring.
template <typename Scalar>
int select_action(const NetworkParams<Scalar>& online, std::span<const double> state,
                  double epsilon, Rng& rng);

/// Double-DQN targets: r + discount * Q_target(s', argmax_a Q_online(s', a)).
/// Episodes are truncations of a continuing process, so nothing is masked.
template <typename Scalar>
std::vector<Scalar> compute_targets(std::span<const Experience* const> batch,
                                    const NetworkParams<Scalar>& online,
                                    const NetworkParams<Scalar>& target, double discount);

/// Packs state vectors into a batch matrix.
template <typename Scalar>
Matrix<Scalar> stack_states(std::span<const Experience* const> batch, bool next);

/// Seed of the engine for a given episode. Shared by training and evaluation
/// so that different policies see identical arrival streams.
std::uint64_t episode_seed(std::uint64_t base, std::int64_t episode);

struct EpisodeStats {
  int episode = 0;
  double cum_reward = 0.0;
  double mean_loss = 0.0;  // 0 when no gradient step ran
  double epsilon_end = 0.0;
  int gradient_steps = 0;
};

/// The training loop, one episode or one step at a time. Owns the engine,
/// both networks, the optimiser and the replay memory.
class DqnTrainer {
 public:
  DqnTrainer(BusinessProcessSuite suite, EngineConfig engine_config, DqnConfig config);

  /// Resets the engine with the episode's seed and runs config().steps steps.
  /// Throws DivergenceError on a non-finite loss.
  EpisodeStats run_episode(int episode);

  /// Starts an episode without running it (step-level access for tests).
  void begin_episode(int episode);
  /// One environment step, replay write, optional gradient step and sync.
  /// Returns the environment reward.
  double step();

  const Network& online() const { return online_; }
  const Network& target() const { return target_; }
  const ReplayMemory& memory() const { return memory_; }
  const Engine& engine() const { return engine_; }
  const DqnConfig& config() const { return config_; }
  std::int64_t global_step() const { return global_step_; }
  std::int64_t sync_count() const { return sync_count_; }

 private:
  DqnConfig config_;
  Engine engine_;
  Network online_;
  Network target_;
  AdamOptimizer<float> optimizer_;
  ReplayMemory memory_;
  Rng rng_;
  StateVector state_;
  std::int64_t global_step_ = 0;
  std::int64_t sync_count_ = 0;
  double episode_loss_sum_ = 0.0;
  int episode_gradient_steps_ = 0;
};

struct TrainingRun {
  std::vector<EpisodeStats> episodes;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  double best_reward = 0.0;
  int best_episode = -1;
  std::uint64_t seed = 0;
  DqnConfig config;
  bool failed = false;
  std::string failure;
};

/// Full training run. When `out_dir` is non-empty, best.ckpt is rewritten
/// whenever an episode's reward strictly beats every earlier one and
/// last.ckpt is written at the end (also after a divergence).
TrainingRun train(const BusinessProcessSuite& suite, const EngineConfig& engine_config,
                  const DqnConfig& config, const std::filesystem::path& out_dir = {},
                  const std::function<void(const EpisodeStats&)>& on_episode = {});

/// Maps the engine state to an action. May keep internal state (random).
using Policy = std::function<Action(const Engine& engine, const StateVector& state)>;

Policy fifo_policy();
Policy spt_policy();
Policy random_policy(std::uint64_t seed);
/// Greedy (epsilon = 0) policy of a trained network.
Policy greedy_policy(Network params);

/// Runs `episodes` episodes of `steps` steps without learning; returns the
/// per-episode cumulative rewards. Episode e is seeded with
/// episode_seed(engine_config.seed, e).
std::vector<double> evaluate(const Policy& policy, const BusinessProcessSuite& suite,
                             const EngineConfig& engine_config, int episodes, int steps);

}  // namespace bpsim
