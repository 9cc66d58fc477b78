#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "migratekit/device.hpp"
#include "migratekit/errors.hpp"
#include "migratekit/llm_gateway.hpp"
#include "migratekit/test_ir.hpp"

namespace migratekit {

// ---------------------------------------------------------------------------
// Privileged events and assertions
// ---------------------------------------------------------------------------

struct PrivilegedItem {
  std::string item_id;
  TestStep payload;
  bool consumed = false;

  StepKind kind() const { return kind_of(payload); }
};

/// Candidate events/assertions from an external migration tool, in the
/// tool's order. Consumed items are never offered again.
struct PrivilegedSet {
  std::string source_tool;
  std::vector<PrivilegedItem> items;

  const PrivilegedItem* find(std::string_view item_id) const;
  PrivilegedItem* find(std::string_view item_id);
  std::vector<const PrivilegedItem*> unconsumed() const;
};

/// An empty or blank document is an empty set.
PrivilegedSet parse_privileged_set(std::string_view document);
PrivilegedSet load_privileged_file(const std::filesystem::path& path);
Json to_json(const PrivilegedSet& set);

/// Lower-case word tokens of the three attributes; resource ids contribute
/// only their name part (after the last '/').
std::set<std::string> widget_tokens(const WidgetRef& widget);
/// Jaccard similarity of the two token sets.
double token_overlap(const WidgetRef& a, const WidgetRef& b);

struct LexicalMapperConfig {
  double threshold = 0.1;
  /// Picks among equally scored target widgets; 0 keeps reading order.
  unsigned seed = 0;
};

/// Stand-in privileged-set producer: walks the target app greedily, mapping
/// each source widget to the best-overlapping target widget. Steps without
/// a mapping above the threshold are dropped.
PrivilegedSet lexical_privileged_set(const TestCase& source, Device& target, const LexicalMapperConfig& config = {});

// ---------------------------------------------------------------------------
// Configuration, decisions, validation
// ---------------------------------------------------------------------------

struct ConcretizerConfig {
  int max_selection = 3;
  std::string unmatched_token = "-1";

  void validate() const;
};

struct Matched {
  std::string item_id;
  friend bool operator==(const Matched&, const Matched&) = default;
};
struct Unmatched {
  friend bool operator==(const Unmatched&, const Unmatched&) = default;
};
using MatchDecision = std::variant<Matched, Unmatched>;

enum class CncRule { IncorrectType, IrrelevantMatching, CompletionUnconfirmed, IncorrectFormat };
std::string_view rule_name(CncRule rule);

struct CncViolation {
  CncRule rule;
  std::string feedback_text;

  friend bool operator==(const CncViolation&, const CncViolation&) = default;
};

/// Type alignment and membership in the unconsumed privileged set.
std::vector<CncViolation> validate_match(const LogicStep& step, const MatchDecision& decision,
                                         const PrivilegedSet& privileged);

/// Which grammar an LLM answer must follow.
enum class OutputContext {
  Step,      // a logic-step template line
  WidgetId,  // "<widget id> [action] [with [value]]" or the unmatched token
  YesNo,
  ItemId,    // a privileged item id or the unmatched token
};

std::optional<CncViolation> validate_output_format(std::string_view response, OutputContext context,
                                                   const std::string& quoted_step,
                                                   const std::string& unmatched_token = "-1");

/// Widgets from the top-left to the bottom-right, one per line:
/// `[id] text: "..." | content-desc: "..." | resource-id: "..." | actions: ...`.
std::string describe_state(const GuiState& state, bool include_actions);

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Invariant: state_history.size() == chosen_events.size() + 1.
struct GenerationContext {
  std::vector<GuiState> state_history;
  std::vector<ConcreteEvent> chosen_events;
  std::vector<ConcreteAssertion> chosen_assertions;
  std::vector<std::size_t> skipped_steps;
  std::vector<TestStep> emitted;  // events and assertions in test-case order

  const GuiState& current() const { return state_history.back(); }
};

/// Functionality and category of the migration, used in prompt texts.
struct MigrationSubject {
  std::string functionality;
  std::string category;
};

enum class Route { Matched, Completion };
std::string_view route_name(Route route);

struct StepTrace {
  std::size_t step_index = 0;
  std::string step_text;
  Route route = Route::Completion;           // Matched iff the matcher's decision was validated
  std::string match_response;                // decision after validation ("P1" or "-1")
  std::optional<std::string> matched_item;   // validated Matched decision
  bool grounding_failed = false;             // matched item not groundable; completion took over
  std::vector<CncViolation> violations;
  std::size_t llm_reasks = 0;
  std::size_t selection_rounds = 0;
  std::size_t executions = 0;
  std::size_t completion_checks = 0;
  std::size_t backtrack_depth = 0;
  bool confirmed = false;
  bool skipped = false;
  std::size_t events_emitted = 0;
  std::size_t assertions_emitted = 0;
};

struct MigrationTrace {
  std::vector<StepTrace> steps;
  TokenUsage token_usage;
  std::size_t device_resets = 0;

  std::size_t count(Route route) const;
  std::size_t skipped() const;
  Json to_json() const;
};

/// Matches one step against the unconsumed privileged items. A validated
/// Matched decision consumes its item.
MatchDecision match_step(const LogicStep& step, PrivilegedSet& privileged, LlmSession& session,
                         const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace);

/// Asks whether `step` is complete given the items generated for it.
/// True iff the trimmed, lower-cased answer begins with "yes".
bool check_completion(const LogicStep& step, const std::vector<TestStep>& generated, LlmSession& session,
                      StepTrace* trace = nullptr);

enum class StepStatus { Confirmed, Skipped };

/// Completion route for event steps. Events executed during the step are
/// appended to `ctx` as they succeed. On Skipped the step's events are
/// rolled back (device reset and replay).
StepStatus select_event(const LogicStep& step, GenerationContext& ctx, Device& device, LlmSession& session,
                        const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace);

/// Completion route for assertion steps: widget selection on the current
/// state for presence, backtracking through earlier states for absence.
StepStatus generate_assertion(const LogicStep& step, GenerationContext& ctx, Device& device, LlmSession& session,
                              const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace);

struct ConcretizeResult {
  TestCase test_case;
  MigrationTrace trace;
};

/// A driver failure interrupted concretization; the partial result is kept.
class MigrationAborted : public DriverError {
 public:
  MigrationAborted(const std::string& message, ConcretizeResult partial);
  const ConcretizeResult& partial() const noexcept { return partial_; }

 private:
  ConcretizeResult partial_;
};

/// Priority strategy: privileged matching first, on-device completion when
/// matching fails or its item cannot be grounded. Every emitted event was
/// executed successfully while the case was built.
ConcretizeResult concretize(const TestLogic& general, PrivilegedSet privileged, Device& device, LlmSession& session,
                            const ConcretizerConfig& config, const std::string& target_app_id);

}  // namespace migratekit
