#include "migratekit/abstractor.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "migratekit/feedback.hpp"

namespace migratekit {

const char* const kSummaryOutputExample =
    "Step 1: (Event) Click or Long-press a widget [New note]\n"
    "Step 2: (Event) Edit a widget [Note title] with [groceries]\n"
    "Step 3: (Event) Click a widget [Save]\n"
    "Step 4: (Assertion) Check a widget [groceries] [appears]\n"
    "Step 5: (Event) Scroll or Swipe a widget [Note list]\n"
    "Step 6: (Assertion) Check a widget [Empty list hint] [disappears]";

void AbstractorConfig::validate() const {
  if (!(max_ratio >= 1.0)) throw ConfigError(fmt::format("max ratio {} must be at least 1", max_ratio));
  if (max_resummarize_rounds < 1) throw ConfigError("max re-summarize rounds must be positive");
}

std::string_view rule_name(TlRule rule) {
  switch (rule) {
    case TlRule::IrrelevantStep: return "irrelevant_step";
    case TlRule::MissingStep: return "missing_step";
    case TlRule::AmbiguousAction: return "ambiguous_action";
  }
  return "unknown";
}

PromptBundle build_summarization_prompt(std::span<const TestLogic> logics, const std::string& functionality,
                                        const std::string& category) {
  if (logics.empty()) throw EmptyInput("summarization needs at least one individual test logic");

  PromptBundle bundle;
  bundle.task_description = fmt::format(
      "You are an expert in mobile GUI testing. Each test logic below was extracted from a test case that tests "
      "the functionality \"{0}\" in a different {1} app. Summarize them into one general test logic that tests "
      "the functionality \"{0}\" in any {1} app.",
      functionality, category);

  std::string input;
  for (std::size_t i = 0; i < logics.size(); ++i) {
    if (i) input += "\n";
    input += fmt::format("Individual test logic {}:\n{}", i + 1, render_steps(logics[i]));
  }
  bundle.input_object = trim(input);
  bundle.output_example = kSummaryOutputExample;
  bundle.output_requirement =
      "1. One test step may be implemented with different actions in different apps (for example, an item may be "
      "deleted by swiping it or by clicking it). Join such alternative actions with \"or\" inside a single test "
      "step.\n"
      "2. Keep every important test step and stay concise. Write one step per line, numbered \"Step k:\", and "
      "follow exactly the event template \"(Event) [Action] a widget [Widget] with [Value]\" (omit \"with "
      "[Value]\" when there is no input value) or the assertion template \"(Assertion) Check a widget [Widget] "
      "[Condition]\". Use only the actions that appear in the output example.";
  return bundle;
}

std::vector<TlViolation> validate_general_logic(const TestLogic& general, std::span<const TestLogic> sources,
                                                const AbstractorConfig& config) {
  std::vector<TlViolation> out;
  if (sources.empty()) return out;

  std::size_t longest = 0;
  std::size_t shortest = sources.front().size();
  for (const auto& s : sources) {
    longest = std::max(longest, s.size());
    shortest = std::min(shortest, s.size());
  }
  const double length = static_cast<double>(general.size());
  const bool too_long = longest == 0 ? general.size() > 0 : length / static_cast<double>(longest) > config.max_ratio;
  if (too_long) out.push_back({TlRule::IrrelevantStep, std::nullopt, feedback::irrelevant_step()});
  if (general.size() < shortest) out.push_back({TlRule::MissingStep, std::nullopt, feedback::missing_step()});

  for (const auto& step : general.steps) {
    const bool canonical = step.is_canonical() && (step.kind == StepKind::Assertion || !step.action_alternatives.empty());
    if (!canonical) {
      out.push_back({TlRule::AmbiguousAction, step.index, feedback::ambiguous_action(feedback::quote_step(step))});
    }
  }
  return out;
}

ParsedLogicResponse parse_logic_response(std::string_view response) {
  ParsedLogicResponse out;
  std::istringstream in{std::string(response)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || !looks_like_step(t)) continue;
    try {
      out.steps.push_back(parse_logic_step(t, out.steps.size() + 1));
    } catch (const FormatError&) {
      out.malformed_lines.push_back(t);
    }
  }
  return out;
}

SummarizationFailed::SummarizationFailed(std::vector<TlViolation> last_violations)
    : Error([&] {
        std::string msg = "summarization failed;";
        for (const auto& v : last_violations) {
          msg += fmt::format(" {}", rule_name(v.rule));
          if (v.offending_step_index) msg += fmt::format("@{}", *v.offending_step_index);
        }
        return msg;
      }()),
      violations_(std::move(last_violations)) {}

namespace {

std::string first_line(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) return trim(line);
  }
  return "general test logic";
}

std::string join_feedback(const std::vector<TlViolation>& violations) {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "\n";
    out += v.feedback_text;
  }
  return out;
}

}  // namespace

SummaryResult summarize(std::span<const TestLogic> logics, const std::string& functionality,
                        const std::string& category, const AbstractorConfig& config, LlmSession& session) {
  config.validate();
  const std::string prompt = assemble_prompt(build_summarization_prompt(logics, functionality, category));

  GeneralProvenance provenance;
  for (const auto& l : logics) {
    if (const auto* ind = std::get_if<IndividualProvenance>(&l.provenance)) {
      provenance.app_ids.push_back(ind->app_id);
    } else {
      for (const auto& id : std::get<GeneralProvenance>(l.provenance).app_ids) provenance.app_ids.push_back(id);
    }
  }

  SummaryResult result;
  std::string response = session.ask(prompt);
  for (int round = 1;; ++round) {
    ParsedLogicResponse parsed = parse_logic_response(response);
    if (!parsed.malformed_lines.empty() || parsed.steps.empty()) {
      std::string fb;
      if (parsed.malformed_lines.empty()) {
        fb = feedback::incorrect_format(feedback::quote_text(first_line(response)));
      } else {
        for (const auto& bad : parsed.malformed_lines) {
          if (!fb.empty()) fb += "\n";
          fb += feedback::incorrect_format(feedback::quote_text(bad));
        }
      }
      ++result.format_reasks;
      response = session.follow_up(prompt, response, fb);
      parsed = parse_logic_response(response);
      if (!parsed.malformed_lines.empty())
        spdlog::warn("summarization: dropping {} malformed line(s) after re-ask", parsed.malformed_lines.size());
    }

    TestLogic general{functionality, category, std::move(parsed.steps), provenance};
    auto violations = validate_general_logic(general, logics, config);
    result.rounds = static_cast<std::size_t>(round);
    if (violations.empty()) {
      result.logic = std::move(general);
      return result;
    }
    result.rejected_rounds.push_back(violations);
    if (round >= config.max_resummarize_rounds) throw SummarizationFailed(std::move(violations));
    response = session.follow_up(prompt, response, join_feedback(violations));
  }
}

}  // namespace migratekit
