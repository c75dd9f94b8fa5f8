#pragma once

#include "bpsim/engine.hpp"

namespace bpsim {

/// Serves the earliest-arrived case (ties: lowest case id) whose waiting task
/// has a free eligible resource, using the lowest-id such resource. Later
/// cases are considered when earlier ones cannot be served.
Action fifo_action(const PrivilegedView& view);

/// Serves the waiting task with the smallest mean duration among those with a
/// free eligible resource (ties: lowest task id, then earliest arrival, then
/// lowest case id), using the lowest-id free eligible resource. Efficiency
/// modifiers are ignored.
Action spt_action(const PrivilegedView& view);

}  // namespace bpsim
