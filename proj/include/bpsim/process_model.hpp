#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bpsim/random.hpp"

namespace bpsim {

using TaskId = int;
using ResourceId = int;
using ProcessId = int;

struct TaskTransition {
  TaskId target = 0;
  double probability = 0.0;

  friend bool operator==(const TaskTransition&, const TaskTransition&) = default;
};

/// A single unit of work. Durations are expressed in simulation steps.
struct Task {
  TaskId id = 0;
  std::vector<TaskTransition> transitions;
  double mean_duration = 1.0;
  double duration_std = 0.0;
  bool is_start = false;

  friend bool operator==(const Task&, const Task&) = default;
};

struct Resource {
  ResourceId id = 0;

  friend bool operator==(const Resource&, const Resource&) = default;
};

/// (resource, task) -> efficiency modifier. A missing entry means the
/// resource cannot execute the task. Lower modifiers mean faster execution.
class EligibilityMap {
 public:
  /// Returns false if the pair was already present (the value is overwritten).
  bool set(ResourceId resource, TaskId task, double efficiency);

  std::optional<double> efficiency(ResourceId resource, TaskId task) const;
  bool is_eligible(ResourceId resource, TaskId task) const {
    return entries_.contains({resource, task});
  }

  const std::map<std::pair<ResourceId, TaskId>, double>& entries() const {
    return entries_;
  }
  std::size_t size() const { return entries_.size(); }

  friend bool operator==(const EligibilityMap&, const EligibilityMap&) = default;

 private:
  std::map<std::pair<ResourceId, TaskId>, double> entries_;
};

struct BusinessProcess {
  ProcessId id = 0;
  double frequency = 1.0;
  double reward = 0.0;
  std::vector<Task> tasks;

  friend bool operator==(const BusinessProcess&, const BusinessProcess&) = default;
};

struct BusinessProcessSuite {
  std::vector<Resource> resources;
  EligibilityMap eligibility;
  std::vector<BusinessProcess> processes;

  std::size_t task_count() const;
  std::size_t resource_count() const { return resources.size(); }

  /// Linear lookups; the engine builds its own dense tables.
  const Task* find_task(TaskId id) const;
  const BusinessProcess* process_of(TaskId id) const;

  friend bool operator==(const BusinessProcessSuite&,
                         const BusinessProcessSuite&) = default;
};

struct Violation {
  std::string rule;      // e.g. "Def6-coverage", "prob-mass"
  std::string location;  // e.g. "resource 0", "process 1 / task 5"
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view rule) const;
  std::string to_string() const;
};

/// Malformed suite document (bad JSON, wrong types, missing keys).
class SuiteParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed document describing an invalid suite.
class SuiteValidationError : public std::runtime_error {
 public:
  explicit SuiteValidationError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

class UnknownTaskError : public std::out_of_range {
 public:
  explicit UnknownTaskError(TaskId id);
};

/// Checks every structural rule and reports all violations found.
/// Resource and task ids must be dense (0..n-1) because they index the state
/// vectors and the action space.
ValidationReport validate_suite(const BusinessProcessSuite& suite);

/// Parses a suite-config JSON document (// comments allowed) and validates it.
BusinessProcessSuite load_suite(std::string_view document);
BusinessProcessSuite load_suite_file(const std::string& path);

/// Inverse of load_suite (comments are not preserved).
std::string serialize_suite(const BusinessProcessSuite& suite);

/// Sentinel returned by sample_next_task when the case finishes.
inline constexpr TaskId kCaseComplete = -1;

/// Picks a successor by the transition probabilities; the residual mass
/// 1 - sum(p) completes the case. Consumes one uniform draw when the task has
/// transitions and none otherwise.
TaskId sample_next_task(const Task& task, Rng& rng);

/// Normal(d, s^2) draw scaled by the efficiency modifier, rounded half away
/// from zero and clamped to at least one step.
int sample_duration(const Task& task, double efficiency, Rng& rng);

/// Resources that have an eligibility entry for the task, ascending.
std::vector<ResourceId> eligible_resources(const BusinessProcessSuite& suite,
                                           TaskId task);

}  // namespace bpsim
