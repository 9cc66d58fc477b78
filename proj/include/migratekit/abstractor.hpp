#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "migratekit/errors.hpp"
#include "migratekit/llm_gateway.hpp"
#include "migratekit/test_ir.hpp"

namespace migratekit {

struct AbstractorConfig {
  double max_ratio = 1.5;
  int max_resummarize_rounds = 3;

  void validate() const;
};

enum class TlRule { IrrelevantStep, MissingStep, AmbiguousAction };

std::string_view rule_name(TlRule rule);

struct TlViolation {
  TlRule rule;
  std::optional<std::size_t> offending_step_index;
  std::string feedback_text;

  friend bool operator==(const TlViolation&, const TlViolation&) = default;
};

/// Fixed one-shot output example used by the summarization prompt. It shows
/// every canonical action, a value-bearing event, both conditions and the
/// "or" form.
extern const char* const kSummaryOutputExample;

/// Throws EmptyInput when `logics` is empty.
PromptBundle build_summarization_prompt(std::span<const TestLogic> logics, const std::string& functionality,
                                        const std::string& category);

/// Applies the three length/vocabulary rules. Violations are ordered
/// irrelevant step, missing step, then one ambiguous action per offending
/// step.
std::vector<TlViolation> validate_general_logic(const TestLogic& general, std::span<const TestLogic> sources,
                                                const AbstractorConfig& config);

/// Steps parsed from an LLM answer plus the lines that carried a step marker
/// but did not parse. Lines without any marker are treated as prose.
struct ParsedLogicResponse {
  std::vector<LogicStep> steps;
  std::vector<std::string> malformed_lines;
};
ParsedLogicResponse parse_logic_response(std::string_view response);

class SummarizationFailed : public Error {
 public:
  explicit SummarizationFailed(std::vector<TlViolation> last_violations);
  const std::vector<TlViolation>& violations() const noexcept { return violations_; }

 private:
  std::vector<TlViolation> violations_;
};

struct SummaryResult {
  TestLogic logic;
  std::size_t rounds = 0;
  /// Violations of each rejected round, in order.
  std::vector<std::vector<TlViolation>> rejected_rounds;
  std::size_t format_reasks = 0;
};

/// Summarizes the individual logics into a general one, re-summarizing with
/// the combined feedback until the rules pass or the round budget is spent.
SummaryResult summarize(std::span<const TestLogic> logics, const std::string& functionality,
                        const std::string& category, const AbstractorConfig& config, LlmSession& session);

}  // namespace migratekit
