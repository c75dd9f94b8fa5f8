#include "bpsim/process_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace bpsim {

using nlohmann::json;

bool EligibilityMap::set(ResourceId resource, TaskId task, double efficiency) {
  auto [it, inserted] = entries_.insert_or_assign({resource, task}, efficiency);
  return inserted;
}

std::optional<double> EligibilityMap::efficiency(ResourceId resource,
                                                 TaskId task) const {
  auto it = entries_.find({resource, task});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t BusinessProcessSuite::task_count() const {
  std::size_t n = 0;
  for (const auto& p : processes) n += p.tasks.size();
  return n;
}

const Task* BusinessProcessSuite::find_task(TaskId id) const {
  for (const auto& p : processes)
    for (const auto& t : p.tasks)
      if (t.id == id) return &t;
  return nullptr;
}

const BusinessProcess* BusinessProcessSuite::process_of(TaskId id) const {
  for (const auto& p : processes)
    for (const auto& t : p.tasks)
      if (t.id == id) return &p;
  return nullptr;
}

bool ValidationReport::has(std::string_view rule) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.rule == rule; });
}

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += fmt::format("{} ({})", v.rule, v.location);
  }
  return out;
}

SuiteValidationError::SuiteValidationError(ValidationReport report)
    : std::runtime_error("invalid suite: " + report.to_string()),
      report_(std::move(report)) {}

UnknownTaskError::UnknownTaskError(TaskId id)
    : std::out_of_range(fmt::format("unknown task id {}", id)) {}

namespace {

void check_dense(const std::vector<int>& ids, const char* rule,
                 const char* what, ValidationReport& report) {
  std::vector<int> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0 && sorted[i] == sorted[i - 1]) continue;  // reported as dup
    if (sorted[i] < 0 || static_cast<std::size_t>(sorted[i]) >= ids.size()) {
      report.violations.push_back(
          {rule, fmt::format("{} {} outside 0..{}", what, sorted[i],
                             static_cast<int>(ids.size()) - 1)});
    }
  }
}

}  // namespace

ValidationReport validate_suite(const BusinessProcessSuite& suite) {
  ValidationReport report;
  auto add = [&](std::string rule, std::string location) {
    report.violations.push_back({std::move(rule), std::move(location)});
  };

  if (suite.processes.empty()) add("empty-suite", "empty suite: no processes");
  if (suite.resources.empty()) add("no-resources", "suite");

  std::set<ResourceId> resource_ids;
  std::vector<int> resource_list;
  for (const auto& r : suite.resources) {
    if (!resource_ids.insert(r.id).second)
      add("resource-id-dup", fmt::format("resource {}", r.id));
    resource_list.push_back(r.id);
  }
  check_dense(resource_list, "resource-id-dense", "resource", report);

  std::set<ProcessId> process_ids;
  std::set<TaskId> task_ids;
  std::vector<int> task_list;
  for (const auto& p : suite.processes) {
    const auto where = fmt::format("process {}", p.id);
    if (!process_ids.insert(p.id).second) add("process-id-dup", where);
    if (!(p.frequency > 0.0) || !std::isfinite(p.frequency))
      add("frequency", where);
    if (!std::isfinite(p.reward)) add("reward", where);
    if (p.tasks.empty()) add("process-empty", where);

    std::set<TaskId> own;
    for (const auto& t : p.tasks) own.insert(t.id);

    int starts = 0;
    for (const auto& t : p.tasks) {
      const auto at = fmt::format("process {} / task {}", p.id, t.id);
      if (!task_ids.insert(t.id).second) add("task-id-dup", at);
      task_list.push_back(t.id);
      if (t.is_start) ++starts;
      if (!(t.mean_duration > 0.0) || !std::isfinite(t.mean_duration))
        add("task-duration", at);
      if (!(t.duration_std >= 0.0) || !std::isfinite(t.duration_std))
        add("task-std", at);

      double mass = 0.0;
      for (const auto& c : t.transitions) {
        if (!(c.probability > 0.0 && c.probability <= 1.0))
          add("prob-range", fmt::format("{} -> {}", at, c.target));
        else
          mass += c.probability;
        if (!own.contains(c.target))
          add("transition-target", fmt::format("{} -> {}", at, c.target));
      }
      if (mass > 1.0 + 1e-9)
        add("prob-mass", fmt::format("{} (sum {})", at, mass));
    }
    if (!p.tasks.empty() && starts != 1)
      add("start-task", fmt::format("{} has {} start tasks", where, starts));
  }
  check_dense(task_list, "task-id-dense", "task", report);

  // Both Def. 6 conditions: every resource is eligible somewhere, and no
  // eligibility entry points outside the defined processes.
  std::set<ResourceId> covered;
  for (const auto& [key, e] : suite.eligibility.entries()) {
    const auto [k, i] = key;
    const auto at = fmt::format("resource {} / task {}", k, i);
    if (!resource_ids.contains(k)) add("eligibility-resource", at);
    if (!task_ids.contains(i)) add("Def6-scope", at);
    if (!(e > 0.0) || !std::isfinite(e)) add("efficiency", at);
    if (resource_ids.contains(k) && task_ids.contains(i)) covered.insert(k);
  }
  for (ResourceId k : resource_ids)
    if (!covered.contains(k))
      add("Def6-coverage", fmt::format("resource {}", k));

  return report;
}

namespace {

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object())
    throw SuiteParseError(fmt::format("{}: expected an object", where));
  auto it = obj.find(key);
  if (it == obj.end())
    throw SuiteParseError(fmt::format("{}: missing key '{}'", where, key));
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw SuiteParseError("");
    } else if constexpr (std::is_same_v<T, int>) {
      if (!it->is_number_integer()) throw SuiteParseError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw SuiteParseError("");
    }
    return it->get<T>();
  } catch (const std::exception&) {
    throw SuiteParseError(
        fmt::format("{}: key '{}' has the wrong type", where, key));
  }
}

const json& get_array(const json& obj, const char* key,
                      const std::string& where) {
  if (!obj.is_object())
    throw SuiteParseError(fmt::format("{}: expected an object", where));
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_array())
    throw SuiteParseError(
        fmt::format("{}: key '{}' must be an array", where, key));
  return *it;
}

}  // namespace

BusinessProcessSuite load_suite(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end(), nullptr,
                      /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw SuiteParseError(fmt::format("malformed suite document: {}", e.what()));
  }

  BusinessProcessSuite suite;
  std::vector<Violation> load_violations;

  for (const auto& r : get_array(doc, "resources", "suite")) {
    if (!r.is_number_integer())
      throw SuiteParseError("suite: resource ids must be integers");
    suite.resources.push_back({r.get<int>()});
  }

  for (const auto& e : get_array(doc, "eligibility", "suite")) {
    const auto k = get_field<int>(e, "resource", "eligibility entry");
    const auto i = get_field<int>(e, "task", "eligibility entry");
    const auto eff = get_field<double>(e, "efficiency", "eligibility entry");
    if (!suite.eligibility.set(k, i, eff))
      load_violations.push_back(
          {"eligibility-dup", fmt::format("resource {} / task {}", k, i)});
  }

  for (const auto& p : get_array(doc, "processes", "suite")) {
    BusinessProcess process;
    process.id = get_field<int>(p, "id", "process");
    const auto where = fmt::format("process {}", process.id);
    process.frequency = get_field<double>(p, "frequency", where);
    process.reward = get_field<double>(p, "reward", where);
    for (const auto& t : get_array(p, "tasks", where)) {
      Task task;
      task.id = get_field<int>(t, "id", where + " task");
      const auto at = fmt::format("{} / task {}", where, task.id);
      task.mean_duration = get_field<double>(t, "d", at);
      task.duration_std = get_field<double>(t, "s", at);
      task.is_start = get_field<bool>(t, "start", at);
      for (const auto& c : get_array(t, "transitions", at)) {
        task.transitions.push_back({get_field<int>(c, "to", at + " transition"),
                                    get_field<double>(c, "p", at + " transition")});
      }
      process.tasks.push_back(std::move(task));
    }
    suite.processes.push_back(std::move(process));
  }

  auto report = validate_suite(suite);
  report.violations.insert(report.violations.end(), load_violations.begin(),
                           load_violations.end());
  if (!report.ok()) throw SuiteValidationError(std::move(report));
  return suite;
}

BusinessProcessSuite load_suite_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open suite file '{}'", path));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_suite(buffer.str());
}

std::string serialize_suite(const BusinessProcessSuite& suite) {
  json doc;
  doc["resources"] = json::array();
  for (const auto& r : suite.resources) doc["resources"].push_back(r.id);
  doc["eligibility"] = json::array();
  for (const auto& [key, e] : suite.eligibility.entries())
    doc["eligibility"].push_back(
        {{"resource", key.first}, {"task", key.second}, {"efficiency", e}});
  doc["processes"] = json::array();
  for (const auto& p : suite.processes) {
    json tasks = json::array();
    for (const auto& t : p.tasks) {
      json transitions = json::array();
      for (const auto& c : t.transitions)
        transitions.push_back({{"to", c.target}, {"p", c.probability}});
      tasks.push_back({{"id", t.id},
                       {"d", t.mean_duration},
                       {"s", t.duration_std},
                       {"start", t.is_start},
                       {"transitions", std::move(transitions)}});
    }
    doc["processes"].push_back({{"id", p.id},
                                {"frequency", p.frequency},
                                {"reward", p.reward},
                                {"tasks", std::move(tasks)}});
  }
  return doc.dump(2);
}

TaskId sample_next_task(const Task& task, Rng& rng) {
  if (task.transitions.empty()) return kCaseComplete;
  const double u = uniform01(rng);
  double cumulative = 0.0;
  for (const auto& c : task.transitions) {
    cumulative += c.probability;
    if (u < cumulative) return c.target;
  }
  return kCaseComplete;
}

int sample_duration(const Task& task, double efficiency, Rng& rng) {
  const double x = normal(rng, task.mean_duration, task.duration_std);
  const double scaled = std::round(x * efficiency);  // half away from zero
  constexpr double kMax = std::numeric_limits<int>::max();
  if (!(scaled >= 1.0)) return 1;
  if (scaled >= kMax) return std::numeric_limits<int>::max();
  return static_cast<int>(scaled);
}

std::vector<ResourceId> eligible_resources(const BusinessProcessSuite& suite,
                                           TaskId task) {
  if (suite.find_task(task) == nullptr) throw UnknownTaskError(task);
  std::vector<ResourceId> out;
  for (const auto& [key, e] : suite.eligibility.entries())
    if (key.second == task) out.push_back(key.first);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace bpsim
