#include "bpsim/engine.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace bpsim {

Encoding parse_encoding(std::string_view name) {
  if (name == "std") return Encoding::kStd;
  if (name == "a1") return Encoding::kA1;
  if (name == "a10") return Encoding::kA10;
  if (name == "a2") return Encoding::kA2;
  throw std::invalid_argument(fmt::format("unknown encoding '{}'", name));
}

std::string_view encoding_name(Encoding encoding) {
  switch (encoding) {
    case Encoding::kStd: return "std";
    case Encoding::kA1: return "a1";
    case Encoding::kA10: return "a10";
    case Encoding::kA2: return "a2";
  }
  throw std::invalid_argument("unknown encoding");
}

std::size_t encoding_width(Encoding encoding, std::size_t resources,
                           std::size_t tasks) {
  switch (encoding) {
    case Encoding::kStd: return resources * tasks;
    case Encoding::kA1:
    case Encoding::kA10: return resources + tasks;
    case Encoding::kA2: return resources + tasks + resources * tasks;
  }
  throw std::invalid_argument("unknown encoding");
}

Action ActionSpace::decode(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= size())
    throw std::out_of_range(fmt::format("action index {} outside [0, {}]",
                                        index, size() - 1));
  if (index == noop_index()) return Action::noop();
  const auto t = static_cast<int>(tasks_);
  return Action::assign(index / t, index % t);
}

int ActionSpace::encode(const Action& action) const {
  if (action.is_noop()) return noop_index();
  if (action.resource >= static_cast<int>(resources_) || action.task < 0 ||
      action.task >= static_cast<int>(tasks_))
    throw std::out_of_range(fmt::format("action ({}, {}) outside action space",
                                        action.resource, action.task));
  return action.resource * static_cast<int>(tasks_) + action.task;
}

Engine::Engine(BusinessProcessSuite suite, EngineConfig config)
    : suite_(std::move(suite)),
      config_(config),
      resource_count_(suite_.resource_count()),
      task_count_(suite_.task_count()),
      actions_(resource_count_, task_count_) {
  if (auto report = validate_suite(suite_); !report.ok())
    throw SuiteValidationError(std::move(report));
  if (!(config_.arrival_probability >= 0.0 && config_.arrival_probability <= 1.0))
    throw std::invalid_argument("arrival probability must lie in [0, 1]");
  if (!(config_.enabled_duration_cap > 0.0))
    throw std::invalid_argument("enabled duration cap must be positive");

  task_index_.resize(task_count_);
  double total = 0.0;
  for (std::size_t p = 0; p < suite_.processes.size(); ++p) {
    const auto& tasks = suite_.processes[p].tasks;
    for (std::size_t j = 0; j < tasks.size(); ++j)
      task_index_[static_cast<std::size_t>(tasks[j].id)] = {p, j};
    total += suite_.processes[p].frequency;
    cumulative_frequency_.push_back(total);
  }
  efficiency_.assign(resource_count_ * task_count_, 0.0);
  for (const auto& [key, e] : suite_.eligibility.entries())
    efficiency_[static_cast<std::size_t>(key.first) * task_count_ +
                static_cast<std::size_t>(key.second)] = e;

  reset();
}

std::size_t Engine::state_width() const {
  return encoding_width(config_.encoding, resource_count_, task_count_);
}

StateVector Engine::reset() { return reset(config_.seed); }

StateVector Engine::reset(std::uint64_t seed) {
  arrival_rng_.seed(derive_seed(seed, 0));
  dynamics_rng_.seed(derive_seed(seed, 1));
  enabled_.clear();
  current_.clear();
  free_.assign(resource_count_, true);
  cases_.clear();
  completed_cases_.assign(suite_.processes.size(), 0);
  next_case_id_ = 0;
  step_count_ = 0;
  completed_reward_total_ = 0.0;
  return encode_state();
}

double Engine::enabled_mean_duration() const {
  double sum = 0.0;
  for (const auto& inst : enabled_) sum += task(inst.task).mean_duration;
  return sum;
}

void Engine::arrive() {
  // Both draws happen every step so the arrival stream does not depend on
  // the state (and therefore not on the policy).
  const double u = uniform01(arrival_rng_);
  const double pick = uniform01(arrival_rng_) * cumulative_frequency_.back();
  if (!(u < config_.arrival_probability)) return;

  const auto it = std::upper_bound(cumulative_frequency_.begin(),
                                   cumulative_frequency_.end(), pick);
  const auto p = std::min<std::size_t>(
      static_cast<std::size_t>(it - cumulative_frequency_.begin()),
      suite_.processes.size() - 1);
  const auto& process = suite_.processes[p];
  const auto start = std::find_if(process.tasks.begin(), process.tasks.end(),
                                  [](const Task& t) { return t.is_start; });

  if (enabled_mean_duration() + start->mean_duration > config_.enabled_duration_cap)
    return;

  BusinessProcessCase c;
  c.case_id = next_case_id_++;
  c.process = process.id;
  c.current_task = start->id;
  c.arrival_step = step_count_;
  cases_.emplace(c.case_id, c);
  enabled_.push_back({c.case_id, start->id});
}

void Engine::allocate(const Action& action) {
  if (action.is_noop()) return;
  const ResourceId k = action.resource;
  const TaskId i = action.task;
  if (!is_free(k) || efficiency(k, i) <= 0.0) return;

  // Oldest matching instance: earliest arrival, then lowest case id.
  auto best = enabled_.end();
  for (auto it = enabled_.begin(); it != enabled_.end(); ++it) {
    if (it->task != i) continue;
    if (best == enabled_.end()) {
      best = it;
      continue;
    }
    const auto& a = cases_.at(it->case_id);
    const auto& b = cases_.at(best->case_id);
    if (a.arrival_step < b.arrival_step ||
        (a.arrival_step == b.arrival_step && a.case_id < b.case_id))
      best = it;
  }
  if (best == enabled_.end()) return;

  free_[static_cast<std::size_t>(k)] = false;
  const auto case_id = best->case_id;
  enabled_.erase(best);
  const int duration = sample_duration(task(i), efficiency(k, i), dynamics_rng_);
  current_.push_back({case_id, i, k, duration});
}

double Engine::countdown() {
  double reward = 0.0;
  std::vector<RunningInstance> still_running;
  still_running.reserve(current_.size());
  for (auto& inst : current_) {
    if (--inst.remaining_steps > 0) {
      still_running.push_back(inst);
      continue;
    }
    free_[static_cast<std::size_t>(inst.resource)] = true;
    auto& c = cases_.at(inst.case_id);
    const TaskId next = sample_next_task(task(inst.task), dynamics_rng_);
    if (next == kCaseComplete) {
      const auto p = task_index_[static_cast<std::size_t>(inst.task)].first;
      c.status = CaseStatus::kCompleted;
      reward += suite_.processes[p].reward;
      ++completed_cases_[p];
      cases_.erase(inst.case_id);
    } else {
      c.current_task = next;
      enabled_.push_back({inst.case_id, next});
    }
  }
  current_ = std::move(still_running);
  return reward;
}

StepResult Engine::step(const Action& action) {
  if (!action.is_noop()) actions_.encode(action);  // range check

  arrive();
  allocate(action);
  const double reward = countdown();
  completed_reward_total_ += reward;
  ++step_count_;
  return {encode_state(), reward};
}

StepResult Engine::step(int action_index) {
  return step(actions_.decode(action_index));
}

std::vector<ResourceId> Engine::free_resources() const {
  std::vector<ResourceId> out;
  for (std::size_t k = 0; k < resource_count_; ++k)
    if (free_[k]) out.push_back(static_cast<ResourceId>(k));
  return out;
}

StateVector Engine::encode_state(Encoding encoding) const {
  const std::size_t R = resource_count_;
  const std::size_t T = task_count_;
  StateVector state{encoding, {}};
  auto& v = state.values;

  std::vector<double> waiting(T, 0.0);
  for (const auto& inst : enabled_) waiting[static_cast<std::size_t>(inst.task)] += 1.0;

  if (encoding == Encoding::kStd) {
    v.assign(R * T, -1.0);
    for (std::size_t k = 0; k < R; ++k)
      for (std::size_t i = 0; i < T; ++i)
        if (efficiency_[k * T + i] > 0.0 && waiting[i] > 0.0) v[k * T + i] = 0.0;
    for (const auto& inst : current_)
      v[static_cast<std::size_t>(inst.resource) * T +
        static_cast<std::size_t>(inst.task)] = 1.0;
    return state;
  }

  v.assign(R, -1.0);
  for (const auto& inst : current_)
    v[static_cast<std::size_t>(inst.resource)] = static_cast<double>(inst.task);

  if (encoding == Encoding::kA10) {
    const double total = static_cast<double>(enabled_.size());
    for (auto& n : waiting) n = total > 0.0 ? n / total : 0.0;
  }
  v.insert(v.end(), waiting.begin(), waiting.end());

  if (encoding == Encoding::kA2) {
    for (std::size_t j = 0; j < R * T; ++j)
      v.push_back(efficiency_[j] > 0.0 ? 1.0 : -1.0);
  }
  return state;
}

PrivilegedView Engine::observe_privileged() const {
  PrivilegedView view;
  view.step = step_count_;
  view.enabled.reserve(enabled_.size());
  for (const auto& inst : enabled_) {
    view.enabled.push_back({inst.case_id, inst.task,
                            cases_.at(inst.case_id).arrival_step,
                            task(inst.task).mean_duration});
  }
  view.free_resources = free_resources();
  view.eligibility = suite_.eligibility;
  return view;
}

}  // namespace bpsim
