#include <gtest/gtest.h>

#include <random>

#include <fmt/format.h>

#include "migratekit/errors.hpp"
#include "migratekit/evaluator.hpp"
#include "migratekit/sim_device.hpp"
#include "support/scenario.hpp"

using namespace migratekit;

namespace {

std::shared_ptr<const SimAppSpec> alpha() {
  return std::make_shared<const SimAppSpec>(load_sim_app_file(migratekit::testing::data_path("apps/todo_alpha.json")));
}

TestCase add_remove() { return parse_test_case(migratekit::testing::read_file(migratekit::testing::data_path("cases/alpha_add_remove.json"))); }

CaseRecord record(bool executed, bool aligned, Verdict verdict, std::uint64_t tokens = 0) {
  CaseRecord r;
  r.case_id = "c";
  r.execution.fully_executed = executed;
  r.aligned = aligned;
  r.verdict = verdict;
  r.token_usage.prompt_tokens = tokens;
  return r;
}

}  // namespace

TEST(RunTest, AddRemoveCaseReplaysWithPassingAssertions) {
  SimDevice d(alpha());
  const ExecutionReport r = run_test(add_remove(), d);
  EXPECT_TRUE(r.fully_executed);
  EXPECT_EQ(r.events_executed, 5u);
  ASSERT_EQ(r.assertion_results.size(), 2u);
  EXPECT_TRUE(r.assertions_pass());
  EXPECT_EQ(r.assertion_results[1].step_position, 6u);
  EXPECT_EQ(judge_success(r, &d.spec(), "Add and remove an item"), Verdict::Success);
}

TEST(RunTest, MissingWidgetStopsEarly) {
  TestCase tc = add_remove();
  std::get<EventStep>(tc.steps[1]).widget = WidgetRef{"Nope", {}, {}};
  SimDevice d(alpha());
  const ExecutionReport r = run_test(tc, d);
  EXPECT_FALSE(r.fully_executed);
  EXPECT_EQ(r.trace.events.size(), 1u);
  ASSERT_TRUE(r.stop_reason);
  EXPECT_NE(r.stop_reason->find("step 2"), std::string::npos);
  EXPECT_EQ(judge_success(r, &d.spec(), "Add and remove an item"), Verdict::Failure);
}

TEST(RunTest, AbsentAssertionOnPresentWidgetFailsButExecutionContinues) {
  TestCase tc = add_remove();
  tc.steps.insert(tc.steps.begin() + 4, AssertionStep{WidgetRef{"sample to do", {}, {}}, ConditionKind::Absent});
  SimDevice d(alpha());
  const ExecutionReport r = run_test(tc, d);
  EXPECT_TRUE(r.fully_executed);
  ASSERT_EQ(r.assertion_results.size(), 3u);
  EXPECT_FALSE(r.assertion_results[1].passed);
  EXPECT_TRUE(r.assertion_results[2].passed);
  EXPECT_EQ(judge_success(r, &d.spec(), "Add and remove an item"), Verdict::Failure);
}

TEST(Alignment, Rules) {
  const TestCase tc = add_remove();
  EXPECT_TRUE(alignment_check(tc, tc));
  TestCase longer = tc;
  longer.steps.push_back(EventStep{WidgetRef{"Add", {}, {}}, ActionKind::Click, {}});
  EXPECT_FALSE(alignment_check(longer, tc));
  TestCase relabeled = tc;
  std::get<EventStep>(relabeled.steps[0]).widget.text = "Add a new item";
  EXPECT_TRUE(alignment_check(relabeled, tc));  // same resource id
  TestCase other_value = tc;
  std::get<EventStep>(other_value.steps[1]).value = "buy milk";
  EXPECT_FALSE(alignment_check(other_value, tc));
}

TEST(JudgeSuccess, OracleAndPrerequisites) {
  SimDevice d(alpha());
  TestCase no_delete = add_remove();
  no_delete.steps.resize(5);  // add, then swipe; the item is never deleted
  const ExecutionReport r = run_test(no_delete, d);
  EXPECT_TRUE(r.fully_executed);
  EXPECT_EQ(judge_success(r, &d.spec(), "Add and remove an item"), Verdict::Failure);
  EXPECT_EQ(judge_success(r, nullptr, "Add and remove an item"), Verdict::Undetermined);
  ExecutionReport partial = r;
  partial.fully_executed = false;
  EXPECT_EQ(judge_success(partial, nullptr, "x"), Verdict::Failure);
}

TEST(Rates, ReferenceCounts) {
  const Rates r = compute_rates({81, 81, 15, 52, 0});
  EXPECT_EQ(r.executable.percent_tenths(), "100.0%");
  EXPECT_EQ(r.perfect.percent_tenths(), "18.5%");
  EXPECT_EQ(r.success.percent_tenths(), "64.2%");
  EXPECT_EQ(r.executable.percent_whole(), "100%");
  EXPECT_EQ(r.perfect.percent_whole(), "18%");
  EXPECT_EQ(r.success.percent_whole(), "64%");
  EXPECT_DOUBLE_EQ(r.executable.value(), 1.0);
  EXPECT_NEAR(r.success.value(), 0.642, 0.0005);
}

TEST(Rates, ZeroPerfectAndEmpty) {
  EXPECT_EQ(compute_rates({7, 5, 0, 3, 0}).perfect.value(), 0.0);
  EXPECT_THROW(compute_rates({0, 0, 0, 0, 0}), EmptySuite);
  EXPECT_THROW(compute_rates({2, 2, 0, 0, 2}), EmptySuite);
  EXPECT_EQ(compute_rates({4, 4, 1, 2, 1}).success.denominator, 3u);
}

TEST(Rates, HalfUpRounding) {
  EXPECT_EQ((Ratio{1, 8}).percent_tenths(), "12.5%");
  EXPECT_EQ((Ratio{1, 16}).percent_tenths(), "6.3%");  // 6.25 rounds up
  EXPECT_EQ((Ratio{2, 3}).percent_tenths(), "66.7%");
  EXPECT_EQ((Ratio{2, 3}).percent_whole(), "66%");
}

TEST(Rates, ScaleInvariance) {
  std::mt19937 rng(11);
  for (int i = 0; i < 500; ++i) {
    const std::size_t total = 1 + rng() % 200;
    const std::size_t executable = rng() % (total + 1);
    const std::size_t successful = rng() % (executable + 1);
    const std::size_t perfect = rng() % (successful + 1);
    const std::size_t k = 1 + rng() % 9;
    const MetricCounts c{total, executable, perfect, successful, 0};
    const MetricCounts s{total * k, executable * k, perfect * k, successful * k, 0};
    ASSERT_TRUE(c.consistent());
    const Rates a = compute_rates(c), b = compute_rates(s);
    EXPECT_DOUBLE_EQ(a.executable.value(), b.executable.value());
    EXPECT_DOUBLE_EQ(a.perfect.value(), b.perfect.value());
    EXPECT_DOUBLE_EQ(a.success.value(), b.success.value());
    EXPECT_EQ(a.success.percent_tenths(), b.success.percent_tenths());
  }
}

TEST(CoverageCapability, Examples) {
  CoverageSet gt, gen;
  for (int i = 0; i < 50; ++i) gt.insert(fmt::format("s/w{}/click", i));
  for (int i = 0; i < 40; ++i) gen.insert(fmt::format("s/w{}/click", i));
  for (int i = 0; i < 15; ++i) gen.insert(fmt::format("t/x{}/click", i));
  EXPECT_DOUBLE_EQ(coverage_capability(gen, gt), 0.8);
  EXPECT_DOUBLE_EQ(coverage_capability(gt, gt), 1.0);
  EXPECT_DOUBLE_EQ(coverage_capability({"a/b/click"}, gt), 0.0);
  EXPECT_THROW(coverage_capability(gen, {}), EmptyGroundTruth);
}

TEST(CoverageCapability, MonotoneInGenerated) {
  std::mt19937 rng(5);
  CoverageSet gt;
  for (int i = 0; i < 30; ++i) gt.insert(fmt::format("u{}", rng() % 60));
  CoverageSet gen;
  double last = 0.0;
  for (int i = 0; i < 100; ++i) {
    gen.insert(fmt::format("u{}", rng() % 60));
    const double now = coverage_capability(gen, gt);
    EXPECT_GE(now, last);
    EXPECT_LE(now, 1.0);
    last = now;
  }
}

TEST(AggregateRun, MeanTokens) {
  const RunReport r = aggregate_run({record(true, true, Verdict::Success, 6000), record(true, true, Verdict::Success, 7000)});
  EXPECT_DOUBLE_EQ(r.mean_tokens, 6500.0);
  EXPECT_DOUBLE_EQ(r.rates.success.value(), 1.0);
}

TEST(AggregateRun, MixedSuiteCounts) {
  // Hand count: 4 cases, 3 executable, 1 perfect, 2 successful.
  const RunReport r = aggregate_run({record(true, true, Verdict::Success), record(true, false, Verdict::Success),
                                     record(true, false, Verdict::Failure), record(false, false, Verdict::Failure)});
  EXPECT_EQ(r.counts.total, 4u);
  EXPECT_EQ(r.counts.executable, 3u);
  EXPECT_EQ(r.counts.perfect, 1u);
  EXPECT_EQ(r.counts.successful, 2u);
  EXPECT_TRUE(r.counts.consistent());
  EXPECT_EQ(r.rates.executable.percent_tenths(), "75.0%");
  EXPECT_THROW(aggregate_run({}), EmptySuite);
}

TEST(AggregateRun, JsonWithoutTimingIsStable) {
  SimDevice d(alpha());
  const TestCase tc = add_remove();
  std::vector<CaseRecord> records;
  records.push_back(evaluate_case("add_remove", tc, &tc, d, &d.spec()));
  const RunReport a = aggregate_run(records);
  records.clear();
  records.push_back(evaluate_case("add_remove", tc, &tc, d, &d.spec()));
  const RunReport b = aggregate_run(records);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_FALSE(a.to_json().contains("mean_wall_time_s"));
  EXPECT_TRUE(a.to_json(true).contains("mean_wall_time_s"));
  EXPECT_EQ(a.counts.perfect, 1u);
  EXPECT_NE(a.summary_table().find("perfect-rate 100.0% (100%)"), std::string::npos);
}

TEST(EvaluateCase, NoGroundTruthIsNeverAligned) {
  SimDevice d(alpha());
  const CaseRecord r = evaluate_case("x", add_remove(), nullptr, d, &d.spec());
  EXPECT_FALSE(r.aligned);
  EXPECT_EQ(r.verdict, Verdict::Success);
  EXPECT_FALSE(r.execution.coverage.empty());
}
