#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "migratekit/device.hpp"
#include "migratekit/llm_gateway.hpp"
#include "migratekit/sim_device.hpp"
#include "migratekit/test_ir.hpp"

namespace migratekit {

struct AssertionResult {
  std::size_t step_position = 0;  // index into TestCase::steps
  ConcreteAssertion assertion;
  bool passed = false;
};

struct ExecutionReport {
  bool fully_executed = false;
  std::size_t events_executed = 0;
  std::optional<std::string> stop_reason;
  std::vector<AssertionResult> assertion_results;
  RunTrace trace;
  CoverageSet coverage;     // empty on non-simulated devices
  VariableStore variables;  // empty on non-simulated devices
  std::chrono::duration<double> wall_time{0};

  bool assertions_pass() const;
};

/// Resets `device` and replays `test_case`: events are grounded by widget
/// identity on the current state, assertions are evaluated where they sit.
/// Stops at the first event that cannot be grounded or is rejected.
ExecutionReport run_test(const TestCase& test_case, Device& device);

/// Strict, ordered equality of (kind, widget identity, action or condition,
/// value).
bool alignment_check(const TestCase& migrated, const TestCase& ground_truth);

enum class Verdict { Success, Failure, Undetermined };
std::string_view verdict_name(Verdict verdict);

/// With no app spec (external device) a fully executed case with passing
/// assertions is Undetermined.
Verdict judge_success(const ExecutionReport& report, const SimAppSpec* spec, const std::string& functionality);

struct MetricCounts {
  std::size_t total = 0;
  std::size_t executable = 0;
  std::size_t perfect = 0;
  std::size_t successful = 0;
  std::size_t undetermined = 0;

  /// perfect <= successful <= executable <= total.
  bool consistent() const;
};

/// Exact fraction with the two presentation formats used in reports.
struct Ratio {
  std::size_t numerator = 0;
  std::size_t denominator = 1;

  double value() const;
  std::string percent_tenths() const;  // "18.5%", round half up
  std::string percent_whole() const;   // "18%", truncated
};

struct Rates {
  Ratio executable;
  Ratio perfect;
  Ratio success;  // over total - undetermined
};

/// Throws EmptySuite when total is 0, or when every case is undetermined.
Rates compute_rates(const MetricCounts& counts);

/// |generated ∩ ground_truth| / |ground_truth|. Throws EmptyGroundTruth.
double coverage_capability(const CoverageSet& generated, const CoverageSet& ground_truth);

struct CaseRecord {
  std::string case_id;
  TestCase migrated;
  ExecutionReport execution;
  bool aligned = false;
  Verdict verdict = Verdict::Failure;
  TokenUsage token_usage;
  Json decisions = Json::object();  // migration trace summary, if any
};

/// Replays and judges one case. `ground_truth` may be null (never aligned).
CaseRecord evaluate_case(std::string case_id, const TestCase& migrated, const TestCase* ground_truth,
                         Device& device, const SimAppSpec* spec);

struct RunReport {
  std::vector<CaseRecord> records;
  MetricCounts counts;
  Rates rates;
  double mean_tokens = 0.0;
  std::chrono::duration<double> mean_wall_time{0};

  /// `with_timing` adds wall times; without it the document is a pure
  /// function of the inputs.
  Json to_json(bool with_timing = false) const;
  std::string summary_table() const;
};

/// Folds per-case records into counts, rates and means. Throws EmptySuite.
RunReport aggregate_run(std::vector<CaseRecord> records);

}  // namespace migratekit
