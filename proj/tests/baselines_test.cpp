#include "bpsim/baselines.hpp"

#include <algorithm>
#include <optional>
#include <tuple>

#include <gtest/gtest.h>

#include "test_helpers.hpp"

namespace bpsim {
namespace {

using Entry = PrivilegedView::Entry;

PrivilegedView view_of(std::vector<Entry> enabled, std::vector<ResourceId> free) {
  PrivilegedView v;
  v.enabled = std::move(enabled);
  v.free_resources = std::move(free);
  static const auto eligibility = testing::paper_suite().eligibility;
  v.eligibility = eligibility;
  return v;
}

bool is_valid(const PrivilegedView& v, const Action& a) {
  if (a.is_noop()) return true;
  const bool free = std::find(v.free_resources.begin(), v.free_resources.end(), a.resource) !=
                    v.free_resources.end();
  const bool waiting = std::any_of(v.enabled.begin(), v.enabled.end(),
                                   [&](const Entry& e) { return e.task == a.task; });
  return free && waiting && v.eligibility.is_eligible(a.resource, a.task);
}

bool any_valid(const PrivilegedView& v) {
  for (const auto& e : v.enabled)
    for (int k : v.free_resources)
      if (v.eligibility.is_eligible(k, e.task)) return true;
  return false;
}

// Brute-force restatements of the two rules over all candidate pairs.
Action reference_fifo(const PrivilegedView& v) {
  std::optional<std::tuple<std::int64_t, std::int64_t, int, int>> best;
  for (const auto& e : v.enabled)
    for (int k : v.free_resources)
      if (v.eligibility.is_eligible(k, e.task)) {
        const auto key = std::make_tuple(e.arrival_step, e.case_id, k, e.task);
        if (!best || key < *best) best = key;
      }
  return best ? Action::assign(std::get<2>(*best), std::get<3>(*best)) : Action::noop();
}

Action reference_spt(const PrivilegedView& v) {
  std::optional<std::tuple<double, int, std::int64_t, std::int64_t, int>> best;
  for (const auto& e : v.enabled)
    for (int k : v.free_resources)
      if (v.eligibility.is_eligible(k, e.task)) {
        const auto key = std::make_tuple(e.mean_duration, e.task, e.arrival_step, e.case_id, k);
        if (!best || key < *best) best = key;
      }
  return best ? Action::assign(std::get<4>(*best), std::get<1>(*best)) : Action::noop();
}

TEST(Fifo, EmptyQueueIsNoOp) {
  EXPECT_TRUE(fifo_action(view_of({}, {0, 1, 2})).is_noop());
  EXPECT_TRUE(spt_action(view_of({}, {0, 1, 2})).is_noop());
}

TEST(Fifo, EarliestCaseFirst) {
  // Case A: arrival 3, task 2 (eligible on 0 and 2). Case B: arrival 5, task 1.
  const auto v = view_of({{8, 1, 5, 6.0}, {4, 2, 3, 3.0}}, {0, 1});
  EXPECT_EQ(fifo_action(v), Action::assign(0, 2));
}

TEST(Fifo, FallsThroughToServiceableCase) {
  // The earliest case waits for task 5 (resources 0 and 2), both busy.
  const auto v = view_of({{0, 5, 1, 2.0}, {1, 3, 2, 5.0}}, {1});
  EXPECT_EQ(fifo_action(v), Action::assign(1, 3));
}

TEST(Fifo, ArrivalTieBrokenByCaseId) {
  const auto v = view_of({{9, 4, 2, 3.0}, {7, 6, 2, 8.0}}, {0, 1, 2});
  EXPECT_EQ(fifo_action(v), Action::assign(0, 6));
}

TEST(Fifo, IgnoresDuration) {
  const auto v = view_of({{0, 6, 0, 100.0}, {1, 4, 1, 1.0}}, {0});
  EXPECT_EQ(fifo_action(v), Action::assign(0, 6));
}

TEST(Spt, ShortestMeanDurationWins) {
  const auto v = view_of({{0, 7, 0, 5.0}, {1, 4, 9, 2.0}}, {0, 1, 2});
  EXPECT_EQ(spt_action(v), Action::assign(0, 4));
}

TEST(Spt, EqualDurationLowerTaskId) {
  const auto v = view_of({{0, 7, 0, 4.0}, {1, 3, 9, 4.0}}, {1, 2});
  EXPECT_EQ(spt_action(v), Action::assign(1, 3));
}

TEST(Spt, EqualTaskEarliestArrival) {
  const auto v = view_of({{5, 2, 8, 3.0}, {6, 2, 4, 3.0}}, {2});
  EXPECT_EQ(spt_action(v), Action::assign(2, 2));
}

TEST(Spt, SkipsUnserviceableShortTask) {
  const auto v = view_of({{0, 5, 0, 1.0}, {1, 7, 1, 9.0}}, {1});
  EXPECT_EQ(spt_action(v), Action::assign(1, 7));
}

TEST(Baselines, RandomViewsValidPureAndMatchingRules) {
  Rng rng(77);
  const auto suite = testing::paper_suite();
  int assigns = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    // One instance per case, as in the engine.
    std::vector<Entry> enabled;
    const int n = static_cast<int>(uniform_int(rng, 0, 6));
    for (int j = 0; j < n; ++j) {
      const int task = static_cast<int>(uniform_int(rng, 0, 7));
      enabled.push_back({j * 3 + static_cast<std::int64_t>(uniform_int(rng, 0, 2)), task,
                         static_cast<std::int64_t>(uniform_int(rng, 0, 5)),
                         suite.find_task(task)->mean_duration});
    }
    std::vector<ResourceId> free;
    for (int k = 0; k < 3; ++k)
      if (uniform01(rng) < 0.5) free.push_back(k);
    const auto v = view_of(std::move(enabled), std::move(free));

    const Action f = fifo_action(v);
    const Action s = spt_action(v);
    ASSERT_TRUE(is_valid(v, f));
    ASSERT_TRUE(is_valid(v, s));
    ASSERT_EQ(f.is_noop(), !any_valid(v));
    ASSERT_EQ(s.is_noop(), !any_valid(v));
    ASSERT_EQ(fifo_action(v), f);
    ASSERT_EQ(spt_action(v), s);
    ASSERT_EQ(f, reference_fifo(v));
    ASSERT_EQ(s, reference_spt(v));
    assigns += !f.is_noop();
  }
  EXPECT_GT(assigns, 30000);
}

TEST(Baselines, ValidOnEngineViews) {
  EngineConfig cfg;
  cfg.seed = 5;
  Engine engine(testing::paper_suite(), cfg);
  for (int step = 0; step < 20000; ++step) {
    const auto view = engine.observe_privileged();
    const Action a = step % 2 ? fifo_action(view) : spt_action(view);
    ASSERT_TRUE(is_valid(view, a)) << "step " << step;
    ASSERT_EQ(a.is_noop(), !any_valid(view));
    engine.step(a);
  }
}

}  // namespace
}  // namespace bpsim
