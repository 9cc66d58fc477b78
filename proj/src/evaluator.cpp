#include "migratekit/evaluator.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "migratekit/errors.hpp"

namespace migratekit {

bool ExecutionReport::assertions_pass() const {
  return std::all_of(assertion_results.begin(), assertion_results.end(), [](const auto& r) { return r.passed; });
}

ExecutionReport run_test(const TestCase& test_case, Device& device) {
  const auto started = std::chrono::steady_clock::now();
  ExecutionReport report;
  GuiState state = device.reset();
  report.trace.states.push_back(state);

  bool stopped = false;
  for (std::size_t i = 0; i < test_case.steps.size() && !stopped; ++i) {
    const TestStep& step = test_case.steps[i];
    if (const auto* a = std::get_if<AssertionStep>(&step)) {
      ConcreteAssertion assertion{a->widget, a->condition};
      report.assertion_results.push_back({i, assertion, holds(assertion, state)});
      continue;
    }
    const auto& e = std::get<EventStep>(step);
    const StateWidget* widget = state.find_same(e.widget);
    if (!widget) {
      report.stop_reason = fmt::format("step {}: widget [{}] not found in state {}", i + 1, e.widget.phrase(), state.state_id);
      stopped = true;
      break;
    }
    ExecOutcome outcome = device.execute(make_event(state, *widget, e.action, e.value));
    if (!outcome.is_ok()) {
      report.stop_reason = fmt::format("step {}: {}", i + 1, outcome.reason());
      stopped = true;
      break;
    }
    report.trace.events.push_back({widget->ref(), e.action, e.value, state.state_id, outcome.state().state_id});
    state = outcome.state();
    report.trace.states.push_back(state);
    ++report.events_executed;
  }
  report.fully_executed = !stopped;

  if (const auto* sim = dynamic_cast<const SimDevice*>(&device)) {
    report.coverage = sim->coverage();
    report.variables = sim->variables();
  }
  report.wall_time = std::chrono::steady_clock::now() - started;
  return report;
}

bool alignment_check(const TestCase& migrated, const TestCase& ground_truth) {
  if (migrated.steps.size() != ground_truth.steps.size()) return false;
  for (std::size_t i = 0; i < migrated.steps.size(); ++i) {
    const TestStep& m = migrated.steps[i];
    const TestStep& g = ground_truth.steps[i];
    if (kind_of(m) != kind_of(g) || !same_widget(widget_of(m), widget_of(g))) return false;
    if (const auto* me = std::get_if<EventStep>(&m)) {
      const auto& ge = std::get<EventStep>(g);
      if (me->action != ge.action || me->value != ge.value) return false;
    } else if (std::get<AssertionStep>(m).condition != std::get<AssertionStep>(g).condition) {
      return false;
    }
  }
  return true;
}

std::string_view verdict_name(Verdict verdict) {
  switch (verdict) {
    case Verdict::Success: return "success";
    case Verdict::Failure: return "failure";
    case Verdict::Undetermined: return "undetermined";
  }
  return "unknown";
}

Verdict judge_success(const ExecutionReport& report, const SimAppSpec* spec, const std::string& functionality) {
  if (!report.fully_executed || !report.assertions_pass()) return Verdict::Failure;
  if (!spec) return Verdict::Undetermined;
  return eval_oracle(*spec, functionality, report.trace, report.variables) ? Verdict::Success : Verdict::Failure;
}

bool MetricCounts::consistent() const {
  return perfect <= successful && successful + undetermined <= executable && executable <= total;
}

double Ratio::value() const { return denominator ? static_cast<double>(numerator) / static_cast<double>(denominator) : 0.0; }

std::string Ratio::percent_tenths() const {
  if (!denominator) return "n/a";
  // Integer arithmetic keeps e.g. 15/81 = 18.518..% away from float edge cases.
  const std::size_t tenths = (numerator * 2000 + denominator) / (2 * denominator);
  return fmt::format("{}.{}%", tenths / 10, tenths % 10);
}

std::string Ratio::percent_whole() const {
  if (!denominator) return "n/a";
  return fmt::format("{}%", numerator * 100 / denominator);
}

Rates compute_rates(const MetricCounts& counts) {
  if (counts.total == 0) throw EmptySuite("no test cases to rate");
  if (counts.undetermined >= counts.total) throw EmptySuite("every case is undetermined; no success rate");
  return Rates{{counts.executable, counts.total},
               {counts.perfect, counts.total},
               {counts.successful, counts.total - counts.undetermined}};
}

double coverage_capability(const CoverageSet& generated, const CoverageSet& ground_truth) {
  if (ground_truth.empty()) throw EmptyGroundTruth("ground-truth coverage set is empty");
  std::size_t common = 0;
  for (const auto& unit : ground_truth) common += generated.count(unit);
  return static_cast<double>(common) / static_cast<double>(ground_truth.size());
}

CaseRecord evaluate_case(std::string case_id, const TestCase& migrated, const TestCase* ground_truth, Device& device,
                         const SimAppSpec* spec) {
  CaseRecord record;
  record.case_id = std::move(case_id);
  record.migrated = migrated;
  record.execution = run_test(migrated, device);
  record.aligned = ground_truth && record.execution.fully_executed && alignment_check(migrated, *ground_truth);
  record.verdict = judge_success(record.execution, spec, migrated.functionality);
  // An aligned case that replays with passing assertions tests the
  // functionality by construction, oracle or not.
  if (record.aligned && record.execution.assertions_pass()) record.verdict = Verdict::Success;
  return record;
}

RunReport aggregate_run(std::vector<CaseRecord> records) {
  if (records.empty()) throw EmptySuite("no test cases to aggregate");
  RunReport report;
  std::uint64_t tokens = 0;
  std::chrono::duration<double> wall{0};
  for (const auto& r : records) {
    ++report.counts.total;
    if (r.execution.fully_executed) ++report.counts.executable;
    if (r.verdict == Verdict::Success) ++report.counts.successful;
    if (r.verdict == Verdict::Undetermined) ++report.counts.undetermined;
    if (r.aligned && r.verdict == Verdict::Success) ++report.counts.perfect;
    tokens += r.token_usage.total();
    wall += r.execution.wall_time;
  }
  const double n = static_cast<double>(records.size());
  report.mean_tokens = static_cast<double>(tokens) / n;
  report.mean_wall_time = wall / n;
  report.records = std::move(records);
  if (report.counts.undetermined < report.counts.total) {
    report.rates = compute_rates(report.counts);
  } else {
    report.rates = Rates{{report.counts.executable, report.counts.total}, {report.counts.perfect, report.counts.total}, {0, 0}};
  }
  return report;
}

namespace {

Json ratio_json(const Ratio& r) {
  Json out = Json::object();
  out["numerator"] = r.numerator;
  out["denominator"] = r.denominator;
  out["percent"] = r.percent_tenths();
  out["whole_percent"] = r.percent_whole();
  return out;
}

}  // namespace

Json RunReport::to_json(bool with_timing) const {
  Json out = Json::object();
  out["cases"] = Json::array();
  for (const auto& r : records) {
    Json c = Json::object();
    c["case_id"] = r.case_id;
    c["functionality"] = r.migrated.functionality;
    c["app_id"] = r.migrated.app_id;
    c["events"] = r.migrated.event_count();
    c["assertions"] = r.migrated.assertion_count();
    c["fully_executed"] = r.execution.fully_executed;
    c["events_executed"] = r.execution.events_executed;
    c["stop_reason"] = r.execution.stop_reason ? Json(*r.execution.stop_reason) : Json(nullptr);
    c["assertion_results"] = Json::array();
    for (const auto& a : r.execution.assertion_results) {
      c["assertion_results"].push_back({{"position", a.step_position + 1},
                                        {"widget", a.assertion.widget.phrase()},
                                        {"condition", condition_token(a.assertion.condition)},
                                        {"passed", a.passed}});
    }
    c["covered_transitions"] = r.execution.coverage.size();
    c["aligned"] = r.aligned;
    c["verdict"] = verdict_name(r.verdict);
    c["tokens"] = r.token_usage.total();
    c["decisions"] = r.decisions;
    if (with_timing) c["wall_time_s"] = r.execution.wall_time.count();
    out["cases"].push_back(std::move(c));
  }
  out["counts"] = {{"total", counts.total},
                   {"executable", counts.executable},
                   {"perfect", counts.perfect},
                   {"successful", counts.successful},
                   {"undetermined", counts.undetermined}};
  out["rates"] = {{"executable", ratio_json(rates.executable)},
                  {"perfect", ratio_json(rates.perfect)},
                  {"success", ratio_json(rates.success)}};
  out["mean_tokens"] = mean_tokens;
  if (with_timing) out["mean_wall_time_s"] = mean_wall_time.count();
  return out;
}

std::string RunReport::summary_table() const {
  std::string out = fmt::format("{:<24} {:>5} {:>8} {:>7} {:>12}\n", "case", "exec", "aligned", "tokens", "verdict");
  for (const auto& r : records) {
    out += fmt::format("{:<24} {:>5} {:>8} {:>7} {:>12}\n", r.case_id, r.execution.fully_executed ? "yes" : "no",
                       r.aligned ? "yes" : "no", r.token_usage.total(), verdict_name(r.verdict));
  }
  out += fmt::format("\ntotal {}  executable {}  perfect {}  successful {}  undetermined {}\n", counts.total,
                     counts.executable, counts.perfect, counts.successful, counts.undetermined);
  out += fmt::format("executable-rate {} ({})  perfect-rate {} ({})  success-rate {} ({})\n",
                     rates.executable.percent_tenths(), rates.executable.percent_whole(), rates.perfect.percent_tenths(),
                     rates.perfect.percent_whole(), rates.success.percent_tenths(), rates.success.percent_whole());
  out += fmt::format("mean tokens per case {:.1f}\n", mean_tokens);
  return out;
}

}  // namespace migratekit
