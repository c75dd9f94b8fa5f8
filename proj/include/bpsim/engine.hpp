#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bpsim/process_model.hpp"
#include "bpsim/random.hpp"

namespace bpsim {

/// Observation layouts offered to agents.
///   std: |R|x|T| matrix, 1 = allocated, 0 = eligible and waiting, -1 otherwise
///   a1:  per-resource allocated task id (or -1), then per-task waiting counts
///   a10: a1 with counts normalised to fractions of the waiting queue
///   a2:  a1 followed by the |R|x|T| eligibility matrix as +1/-1
enum class Encoding { kStd, kA1, kA10, kA2 };

Encoding parse_encoding(std::string_view name);
std::string_view encoding_name(Encoding encoding);
std::size_t encoding_width(Encoding encoding, std::size_t resources,
                           std::size_t tasks);

struct StateVector {
  Encoding encoding = Encoding::kA10;
  std::vector<double> values;

  friend bool operator==(const StateVector&, const StateVector&) = default;
};

/// Either NoOp or Assign(resource, task).
struct Action {
  ResourceId resource = -1;
  TaskId task = -1;

  static Action noop() { return {}; }
  static Action assign(ResourceId k, TaskId i) { return {k, i}; }
  bool is_noop() const { return resource < 0; }

  friend bool operator==(const Action&, const Action&) = default;
};

/// Flat action space of size |R|*|T| + 1. The last index is NoOp, the others
/// are row-major: index = k * |T| + i.
class ActionSpace {
 public:
  ActionSpace(std::size_t resources, std::size_t tasks)
      : resources_(resources), tasks_(tasks) {}

  std::size_t size() const { return resources_ * tasks_ + 1; }
  int noop_index() const { return static_cast<int>(resources_ * tasks_); }

  /// Throws std::out_of_range outside [0, size()).
  Action decode(int index) const;
  int encode(const Action& action) const;

 private:
  std::size_t resources_;
  std::size_t tasks_;
};

struct EngineConfig {
  double arrival_probability = 0.5;
  /// Upper bound on the summed mean duration of the enabled set that a newly
  /// arriving case may not push it past.
  double enabled_duration_cap = 40.0;
  Encoding encoding = Encoding::kA10;
  std::uint64_t seed = 0;
};

enum class CaseStatus { kRunning = 0, kCompleted = 1 };

struct BusinessProcessCase {
  std::int64_t case_id = 0;
  ProcessId process = 0;
  TaskId current_task = 0;
  CaseStatus status = CaseStatus::kRunning;
  std::int64_t arrival_step = 0;
};

/// A task instance waiting for a resource.
struct EnabledInstance {
  std::int64_t case_id = 0;
  TaskId task = 0;

  friend bool operator==(const EnabledInstance&, const EnabledInstance&) = default;
};

/// A task instance occupying a resource.
struct RunningInstance {
  std::int64_t case_id = 0;
  TaskId task = 0;
  ResourceId resource = 0;
  int remaining_steps = 0;

  friend bool operator==(const RunningInstance&, const RunningInstance&) = default;
};

/// Read-only snapshot for rule-based policies.
struct PrivilegedView {
  struct Entry {
    std::int64_t case_id = 0;
    TaskId task = 0;
    std::int64_t arrival_step = 0;
    double mean_duration = 0.0;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  std::int64_t step = 0;
  std::vector<Entry> enabled;            // engine queue order
  std::vector<ResourceId> free_resources;  // ascending
  EligibilityMap eligibility;

  friend bool operator==(const PrivilegedView&, const PrivilegedView&) = default;
};

struct StepResult {
  StateVector state;
  double reward = 0.0;
};

/// Discrete-step simulator for a business process suite.
///
/// Each step runs four phases in order: case arrival, allocation of the
/// requested (resource, task) pair, countdown of running instances with
/// completion handling, and encoding of the new state. Arrivals draw from
/// their own generator so that policies run on the same seed see the same
/// arrival stream; durations and successor choices use a second generator.
class Engine {
 public:
  Engine(BusinessProcessSuite suite, EngineConfig config);

  /// Restores the empty state and reseeds from config().seed.
  StateVector reset();
  /// Same, with an explicit episode seed.
  StateVector reset(std::uint64_t seed);

  StepResult step(const Action& action);
  /// Decodes a flat action index first; out-of-range indices throw.
  StepResult step(int action_index);

  StateVector encode_state() const { return encode_state(config_.encoding); }
  StateVector encode_state(Encoding encoding) const;

  PrivilegedView observe_privileged() const;

  const BusinessProcessSuite& suite() const { return suite_; }
  const EngineConfig& config() const { return config_; }
  const ActionSpace& action_space() const { return actions_; }
  std::size_t resource_count() const { return resource_count_; }
  std::size_t task_count() const { return task_count_; }
  std::size_t state_width() const;

  std::int64_t step_count() const { return step_count_; }
  double completed_reward_total() const { return completed_reward_total_; }
  const std::vector<EnabledInstance>& enabled() const { return enabled_; }
  const std::vector<RunningInstance>& current() const { return current_; }
  std::vector<ResourceId> free_resources() const;
  bool is_free(ResourceId k) const { return free_[static_cast<std::size_t>(k)]; }
  /// Running cases only; completed cases are counted, not retained.
  const std::map<std::int64_t, BusinessProcessCase>& cases() const {
    return cases_;
  }
  /// Completed case count per process, indexed by position in suite().processes.
  const std::vector<std::int64_t>& completed_cases() const {
    return completed_cases_;
  }
  double enabled_mean_duration() const;

  /// Efficiency of resource k on task i, or 0 when not eligible.
  double efficiency(ResourceId k, TaskId i) const {
    return efficiency_[static_cast<std::size_t>(k) * task_count_ +
                       static_cast<std::size_t>(i)];
  }
  const Task& task(TaskId i) const {
    const auto [p, j] = task_index_[static_cast<std::size_t>(i)];
    return suite_.processes[p].tasks[j];
  }

 private:
  void arrive();
  void allocate(const Action& action);
  double countdown();

  BusinessProcessSuite suite_;
  EngineConfig config_;
  std::size_t resource_count_;
  std::size_t task_count_;
  ActionSpace actions_;
  // (process position, task position) per task id; indices keep copies valid.
  std::vector<std::pair<std::size_t, std::size_t>> task_index_;
  std::vector<double> efficiency_;
  std::vector<double> cumulative_frequency_;

  Rng arrival_rng_;
  Rng dynamics_rng_;
  std::vector<EnabledInstance> enabled_;
  std::vector<RunningInstance> current_;
  std::vector<bool> free_;
  std::map<std::int64_t, BusinessProcessCase> cases_;
  std::vector<std::int64_t> completed_cases_;
  std::int64_t next_case_id_ = 0;
  std::int64_t step_count_ = 0;
  double completed_reward_total_ = 0.0;
};

}  // namespace bpsim
