#include "bpsim/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <fmt/format.h>

#include "bpsim/baselines.hpp"
#include "bpsim/checkpoint.hpp"

namespace bpsim {

std::size_t DqnConfig::replay_capacity() const {
  return static_cast<std::size_t>(
      std::floor(static_cast<double>(episodes) * steps * memory_fraction));
}

std::int64_t DqnConfig::anneal_steps() const {
  return static_cast<std::int64_t>(
      std::floor(static_cast<double>(episodes) * steps * memory_fraction));
}

void DqnConfig::validate() const {
  if (episodes <= 0 || steps <= 0 || batch_size <= 0 || target_sync_period <= 0)
    throw std::invalid_argument("episodes, steps, batch size and sync period must be positive");
  if (!(memory_fraction > 0.0)) throw std::invalid_argument("memory fraction must be positive");
  if (!(discount >= 0.0)) throw std::invalid_argument("discount must be non-negative");
  if (!(epsilon_end <= epsilon_start) || epsilon_end < 0.0 || epsilon_start > 1.0)
    throw std::invalid_argument("need 0 <= epsilon_end <= epsilon_start <= 1");
  if (batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  // A capacity below the batch size is legal: no gradient step ever runs.
  if (replay_capacity() < 1) throw std::invalid_argument("replay capacity must be at least 1");
}

double epsilon_at(std::int64_t step, const DqnConfig& config) {
  const auto horizon = config.anneal_steps();
  if (horizon <= 0 || step >= horizon) return config.epsilon_end;
  const double frac = static_cast<double>(step) / static_cast<double>(horizon);
  return config.epsilon_start * (1.0 - frac) + config.epsilon_end * frac;
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayMemory::push(Experience experience) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(experience));
}

std::vector<const Experience*> ReplayMemory::sample(std::size_t count, Rng& rng) const {
  if (count > items_.size())
    throw std::invalid_argument(
        fmt::format("cannot sample {} items from a memory of {}", count, items_.size()));
  std::vector<std::size_t> picked;
  picked.reserve(count);
  // Rejection sampling: count is tiny next to size in practice.
  while (picked.size() < count) {
    const auto i = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(items_.size()) - 1));
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  }
  std::vector<const Experience*> out;
  out.reserve(count);
  for (auto i : picked) out.push_back(&items_[i]);
  return out;
}

template <typename Scalar>
int argmax(std::span<const Scalar> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

template <typename Scalar>
int select_action(const NetworkParams<Scalar>& online, std::span<const double> state,
                  double epsilon, Rng& rng) {
  const int actions = online.shape().output;
  if (uniform01(rng) < epsilon) return static_cast<int>(uniform_int(rng, 0, actions - 1));
  Matrix<Scalar> x(1, static_cast<Eigen::Index>(state.size()));
  for (std::size_t j = 0; j < state.size(); ++j)
    x(0, static_cast<Eigen::Index>(j)) = static_cast<Scalar>(state[j]);
  const Matrix<Scalar> q = forward(online, x);
  return argmax<Scalar>({q.data(), static_cast<std::size_t>(q.cols())});
}

template <typename Scalar>
Matrix<Scalar> stack_states(std::span<const Experience* const> batch, bool next) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto width = (next ? batch[0]->next_state : batch[0]->state).size();
  Matrix<Scalar> x(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(width));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = next ? batch[b]->next_state : batch[b]->state;
    if (s.size() != width) throw std::invalid_argument("inconsistent state widths in batch");
    for (std::size_t j = 0; j < width; ++j)
      x(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = static_cast<Scalar>(s[j]);
  }
  return x;
}

template <typename Scalar>
std::vector<Scalar> compute_targets(std::span<const Experience* const> batch,
                                    const NetworkParams<Scalar>& online,
                                    const NetworkParams<Scalar>& target, double discount) {
  const Matrix<Scalar> next = stack_states<Scalar>(batch, true);
  const Matrix<Scalar> q_online = forward(online, next);
  const Matrix<Scalar> q_target = forward(target, next);
  std::vector<Scalar> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    const int best = argmax<Scalar>(
        {q_online.row(row).data(), static_cast<std::size_t>(q_online.cols())});
    out[b] = static_cast<Scalar>(batch[b]->reward) +
             static_cast<Scalar>(discount) * q_target(row, best);
  }
  return out;
}

#define BPSIM_INSTANTIATE(S)                                                                 \
  template int argmax<S>(std::span<const S>);                                                \
  template int select_action<S>(const NetworkParams<S>&, std::span<const double>, double,    \
                                Rng&);                                                       \
  template Matrix<S> stack_states<S>(std::span<const Experience* const>, bool);              \
  template std::vector<S> compute_targets<S>(std::span<const Experience* const>,             \
                                             const NetworkParams<S>&, const NetworkParams<S>&, \
                                             double);
BPSIM_INSTANTIATE(float)
BPSIM_INSTANTIATE(double)
#undef BPSIM_INSTANTIATE

std::uint64_t episode_seed(std::uint64_t base, std::int64_t episode) {
  return derive_seed(derive_seed(base, 0x45504953ULL), static_cast<std::uint64_t>(episode));
}

namespace {

Network init_network(const NetworkShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return Network::he_uniform(shape, rng);
}

}  // namespace

DqnTrainer::DqnTrainer(BusinessProcessSuite suite, EngineConfig engine_config,
                       DqnConfig config)
    : config_((config.validate(), config)),
      engine_(std::move(suite), engine_config),
      online_(init_network(q_network_shape(engine_.state_width(), engine_.action_space().size()),
                           derive_seed(config.seed, 1))),
      target_(init_network(online_.shape(), derive_seed(config.seed, 2))),
      optimizer_(online_.shape(), config.optimizer),
      memory_(config.replay_capacity()),
      rng_(derive_seed(config.seed, 3)) {}

void DqnTrainer::begin_episode(int episode) {
  state_ = engine_.reset(episode_seed(config_.seed, episode));
  episode_loss_sum_ = 0.0;
  episode_gradient_steps_ = 0;
}

double DqnTrainer::step() {
  const double epsilon = epsilon_at(global_step_, config_);
  const int action = select_action(online_, state_.values, epsilon, rng_);
  auto [next, reward] = engine_.step(action);
  memory_.push({state_.values, action, reward, next.values});
  state_ = std::move(next);

  const auto batch_size = static_cast<std::size_t>(config_.batch_size);
  if (memory_.size() >= batch_size) {
    const auto batch = memory_.sample(batch_size, rng_);
    const auto targets = compute_targets<float>(batch, online_, target_, config_.discount);
    const Matrix<float> inputs = stack_states<float>(batch, false);
    std::vector<int> actions(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) actions[b] = batch[b]->action;
    const float loss = train_step<float>(online_, optimizer_, inputs, actions, targets);
    episode_loss_sum_ += loss;
    ++episode_gradient_steps_;
  }

  ++global_step_;
  if (global_step_ % config_.target_sync_period == 0) {
    copy_into(online_, target_);
    ++sync_count_;
  }
  return reward;
}

EpisodeStats DqnTrainer::run_episode(int episode) {
  begin_episode(episode);
  EpisodeStats stats;
  stats.episode = episode;
  for (int m = 0; m < config_.steps; ++m) {
    stats.epsilon_end = epsilon_at(global_step_, config_);
    stats.cum_reward += step();
  }
  stats.gradient_steps = episode_gradient_steps_;
  stats.mean_loss =
      episode_gradient_steps_ > 0 ? episode_loss_sum_ / episode_gradient_steps_ : 0.0;
  return stats;
}

TrainingRun train(const BusinessProcessSuite& suite, const EngineConfig& engine_config,
                  const DqnConfig& config, const std::filesystem::path& out_dir,
                  const std::function<void(const EpisodeStats&)>& on_episode) {
  TrainingRun run;
  run.seed = config.seed;
  run.config = config;
  DqnTrainer trainer(suite, engine_config, config);
  const bool write = !out_dir.empty();
  if (write) {
    std::filesystem::create_directories(out_dir);
    run.best_checkpoint = out_dir / "best.ckpt";
    run.last_checkpoint = out_dir / "last.ckpt";
  }

  double best = -std::numeric_limits<double>::infinity();
  for (int e = 0; e < config.episodes; ++e) {
    EpisodeStats stats;
    try {
      stats = trainer.run_episode(e);
    } catch (const DivergenceError& err) {
      run.failed = true;
      run.failure = fmt::format("episode {}: {}", e, err.what());
      break;
    }
    run.episodes.push_back(stats);
    if (on_episode) on_episode(stats);
    if (stats.cum_reward > best) {
      best = stats.cum_reward;
      run.best_reward = best;
      run.best_episode = e;
      if (write) save_params(trainer.online(), run.best_checkpoint);
    }
  }
  if (write) save_params(trainer.online(), run.last_checkpoint);
  return run;
}

Policy fifo_policy() {
  return [](const Engine& engine, const StateVector&) {
    return fifo_action(engine.observe_privileged());
  };
}

Policy spt_policy() {
  return [](const Engine& engine, const StateVector&) {
    return spt_action(engine.observe_privileged());
  };
}

Policy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng](const Engine& engine, const StateVector&) {
    const auto n = static_cast<std::int64_t>(engine.action_space().size());
    return engine.action_space().decode(static_cast<int>(uniform_int(*rng, 0, n - 1)));
  };
}

Policy greedy_policy(Network params) {
  auto shared = std::make_shared<const Network>(std::move(params));
  return [shared](const Engine& engine, const StateVector& state) {
    if (state.values.size() != static_cast<std::size_t>(shared->shape().input))
      throw std::invalid_argument("network input width does not match the state encoding");
    Matrix<float> x(1, static_cast<Eigen::Index>(state.values.size()));
    for (std::size_t j = 0; j < state.values.size(); ++j)
      x(0, static_cast<Eigen::Index>(j)) = static_cast<float>(state.values[j]);
    const Matrix<float> q = forward(*shared, x);
    return engine.action_space().decode(
        argmax<float>({q.data(), static_cast<std::size_t>(q.cols())}));
  };
}

std::vector<double> evaluate(const Policy& policy, const BusinessProcessSuite& suite,
                             const EngineConfig& engine_config, int episodes, int steps) {
  if (episodes < 0 || steps < 0)
    throw std::invalid_argument("episodes and steps must be non-negative");
  Engine engine(suite, engine_config);
  std::vector<double> rewards;
  rewards.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    StateVector state = engine.reset(episode_seed(engine_config.seed, e));
    double total = 0.0;
    for (int m = 0; m < steps; ++m) {
      auto result = engine.step(policy(engine, state));
      total += result.reward;
      state = std::move(result.state);
    }
    rewards.push_back(total);
  }
  return rewards;
}

}  // namespace bpsim
