#include "bpsim/baselines.hpp"

#include <algorithm>
#include <optional>
#include <tuple>

namespace bpsim {
namespace {

std::optional<ResourceId> first_free_eligible(const PrivilegedView& view,
                                              TaskId task) {
  // free_resources is ascending.
  for (ResourceId k : view.free_resources)
    if (view.eligibility.is_eligible(k, task)) return k;
  return std::nullopt;
}

}  // namespace

Action fifo_action(const PrivilegedView& view) {
  const PrivilegedView::Entry* best = nullptr;
  ResourceId best_resource = -1;
  for (const auto& e : view.enabled) {
    if (best && std::tie(best->arrival_step, best->case_id) <=
                    std::tie(e.arrival_step, e.case_id))
      continue;
    if (auto k = first_free_eligible(view, e.task)) {
      best = &e;
      best_resource = *k;
    }
  }
  return best ? Action::assign(best_resource, best->task) : Action::noop();
}

Action spt_action(const PrivilegedView& view) {
  const PrivilegedView::Entry* best = nullptr;
  ResourceId best_resource = -1;
  for (const auto& e : view.enabled) {
    if (best && std::tie(best->mean_duration, best->task, best->arrival_step,
                         best->case_id) <=
                    std::tie(e.mean_duration, e.task, e.arrival_step, e.case_id))
      continue;
    if (auto k = first_free_eligible(view, e.task)) {
      best = &e;
      best_resource = *k;
    }
  }
  return best ? Action::assign(best_resource, best->task) : Action::noop();
}

}  // namespace bpsim
