#include "migratekit/concretizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "migratekit/feedback.hpp"

namespace migratekit {

// ---------------------------------------------------------------------------
// Privileged sets
// ---------------------------------------------------------------------------

const PrivilegedItem* PrivilegedSet::find(std::string_view item_id) const {
  for (const auto& item : items) {
    if (item.item_id == item_id) return &item;
  }
  return nullptr;
}

PrivilegedItem* PrivilegedSet::find(std::string_view item_id) {
  return const_cast<PrivilegedItem*>(std::as_const(*this).find(item_id));
}

std::vector<const PrivilegedItem*> PrivilegedSet::unconsumed() const {
  std::vector<const PrivilegedItem*> out;
  for (const auto& item : items) {
    if (!item.consumed) out.push_back(&item);
  }
  return out;
}

PrivilegedSet parse_privileged_set(std::string_view document) {
  if (trim(document).empty()) return {};
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw SchemaError("", std::string("malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("", "privileged set must be an object");
  PrivilegedSet out;
  auto tool = doc.find("source_tool");
  if (tool == doc.end() || !tool->is_string()) throw SchemaError("source_tool", "expected a string");
  out.source_tool = tool->get<std::string>();
  auto items = doc.find("items");
  if (items == doc.end() || !items->is_array()) throw SchemaError("items", "expected an array");
  for (std::size_t i = 0; i < items->size(); ++i) {
    const Json& item = (*items)[i];
    const std::string path = fmt::format("items[{}]", i);
    if (!item.is_object()) throw SchemaError(path, "expected an object");
    auto id = item.find("item_id");
    if (id == item.end() || !id->is_string() || id->get<std::string>().empty())
      throw SchemaError(path + ".item_id", "expected a non-empty string");
    if (out.find(id->get<std::string>())) throw SchemaError(path + ".item_id", "duplicate item id");
    out.items.push_back({id->get<std::string>(), step_from_json(item, path), false});
  }
  return out;
}

PrivilegedSet load_privileged_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_privileged_set(buf.str());
}

Json to_json(const PrivilegedSet& set) {
  Json out = Json::object();
  out["source_tool"] = set.source_tool;
  out["items"] = Json::array();
  for (const auto& item : set.items) {
    Json entry = Json::object();
    entry["item_id"] = item.item_id;
    const Json payload = to_json(item.payload);
    for (const auto& [k, v] : payload.items()) entry[k] = v;
    out["items"].push_back(std::move(entry));
  }
  return out;
}

std::set<std::string> widget_tokens(const WidgetRef& widget) {
  std::set<std::string> out;
  auto add_words = [&](std::string_view text) {
    std::string word;
    for (char c : text) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!word.empty()) {
        out.insert(std::move(word));
        word.clear();
      }
    }
    if (!word.empty()) out.insert(std::move(word));
  };
  if (widget.text) add_words(*widget.text);
  if (widget.content_desc) add_words(*widget.content_desc);
  if (widget.resource_id) {
    std::string_view rid = *widget.resource_id;
    if (auto slash = rid.rfind('/'); slash != std::string_view::npos) rid = rid.substr(slash + 1);
    add_words(rid);
  }
  return out;
}

double token_overlap(const WidgetRef& a, const WidgetRef& b) {
  const auto ta = widget_tokens(a);
  const auto tb = widget_tokens(b);
  if (ta.empty() || tb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : ta) common += tb.count(t);
  return static_cast<double>(common) / static_cast<double>(ta.size() + tb.size() - common);
}

namespace {

/// Best-scoring widget among `candidates`; ties are resolved by `seed`.
const StateWidget* best_match(const WidgetRef& source, const std::vector<const StateWidget*>& candidates,
                              const LexicalMapperConfig& config) {
  double best = -1.0;
  std::vector<const StateWidget*> tied;
  for (const StateWidget* w : candidates) {
    const double score = token_overlap(source, w->ref());
    if (score > best) {
      best = score;
      tied = {w};
    } else if (score == best) {
      tied.push_back(w);
    }
  }
  if (tied.empty() || best < config.threshold || best <= 0.0) return nullptr;
  return tied[config.seed % tied.size()];
}

}  // namespace

PrivilegedSet lexical_privileged_set(const TestCase& source, Device& target, const LexicalMapperConfig& config) {
  PrivilegedSet out;
  out.source_tool = "lexical";
  GuiState state = target.reset();
  std::vector<GuiState> visited{state};

  for (const auto& step : source.steps) {
    const std::string next_id = fmt::format("P{}", out.items.size() + 1);
    if (const auto* e = std::get_if<EventStep>(&step)) {
      std::vector<const StateWidget*> candidates;
      for (const StateWidget* w : reading_order(state)) {
        if (w->supports(e->action)) candidates.push_back(w);
      }
      const StateWidget* best = best_match(e->widget, candidates, config);
      if (!best) continue;
      ExecOutcome outcome = target.execute(make_event(state, *best, e->action, e->value));
      if (!outcome.is_ok()) continue;
      out.items.push_back({next_id, EventStep{best->ref(), e->action, e->value}, false});
      state = outcome.state();
      visited.push_back(state);
      continue;
    }
    const auto& a = std::get<AssertionStep>(step);
    std::vector<const StateWidget*> candidates;
    if (a.condition == ConditionKind::Present) {
      candidates = reading_order(state);
    } else {
      for (auto it = visited.rbegin(); it != visited.rend(); ++it) {
        for (const StateWidget* w : reading_order(*it)) {
          if (state.find_same(w->ref())) continue;
          const bool dup = std::any_of(candidates.begin(), candidates.end(),
                                       [&](const StateWidget* c) { return same_widget(c->ref(), w->ref()); });
          if (!dup) candidates.push_back(w);
        }
      }
    }
    if (const StateWidget* best = best_match(a.widget, candidates, config))
      out.items.push_back({next_id, AssertionStep{best->ref(), a.condition}, false});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

void ConcretizerConfig::validate() const {
  if (max_selection < 1) throw ConfigError("max selection must be at least 1");
  if (trim(unmatched_token).empty()) throw ConfigError("unmatched token must not be empty");
}

std::string_view rule_name(CncRule rule) {
  switch (rule) {
    case CncRule::IncorrectType: return "incorrect_type";
    case CncRule::IrrelevantMatching: return "irrelevant_matching";
    case CncRule::CompletionUnconfirmed: return "completion_unconfirmed";
    case CncRule::IncorrectFormat: return "incorrect_format";
  }
  return "unknown";
}

std::string_view route_name(Route route) { return route == Route::Matched ? "matched" : "completion"; }

std::vector<CncViolation> validate_match(const LogicStep& step, const MatchDecision& decision,
                                         const PrivilegedSet& privileged) {
  const auto* matched = std::get_if<Matched>(&decision);
  if (!matched) return {};
  const std::string quoted = feedback::quote_step(step);
  const PrivilegedItem* item = privileged.find(matched->item_id);
  if (!item || item->consumed) return {{CncRule::IrrelevantMatching, feedback::irrelevant_matching(quoted)}};
  if (item->kind() != step.kind) return {{CncRule::IncorrectType, feedback::incorrect_type(quoted)}};
  return {};
}

namespace {

/// Trims, drops surrounding quotes/backticks and one trailing period.
std::string strip_answer(std::string_view response) {
  std::string s = trim(response);
  if (!s.empty() && s.back() == '.') s = trim(std::string_view(s).substr(0, s.size() - 1));
  while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'' || s.front() == '`') && s.back() == s.front())
    s = trim(std::string_view(s).substr(1, s.size() - 2));
  if (!s.empty() && s.back() == '.') s.pop_back();
  return trim(s);
}

const std::regex& widget_answer_pattern() {
  static const std::regex re(
      R"(^(?:\[([^\[\]]+)\]|([^\s\[\]]+))(?:\s+(click|edit|swipe|scroll|long-press|long press|longpress))?(?:\s+with\s+\[([^\[\]]*)\])?$)",
      std::regex::ECMAScript | std::regex::icase);
  return re;
}

const std::regex& item_answer_pattern() {
  static const std::regex re(R"(^\[?([A-Za-z0-9_:.\-]+)\]?$)");
  return re;
}

struct WidgetAnswer {
  bool unmatched = false;
  std::string widget_id;
  std::optional<ActionKind> action;
  std::optional<std::string> value;
};

std::optional<WidgetAnswer> parse_widget_answer(std::string_view response, const std::string& unmatched_token) {
  const std::string s = strip_answer(response);
  if (s == unmatched_token) return WidgetAnswer{true, {}, {}, {}};
  std::smatch m;
  if (!std::regex_match(s, m, widget_answer_pattern())) return std::nullopt;
  WidgetAnswer out;
  out.widget_id = m[1].matched ? trim(m[1].str()) : m[2].str();
  if (m[3].matched) out.action = parse_action(m[3].str());
  if (m[4].matched) {
    std::string v = trim(m[4].str());
    if (!v.empty()) out.value = std::move(v);
  }
  return out;
}

std::optional<MatchDecision> parse_item_answer(std::string_view response, const std::string& unmatched_token) {
  const std::string s = strip_answer(response);
  if (s == unmatched_token) return MatchDecision{Unmatched{}};
  std::smatch m;
  if (!std::regex_match(s, m, item_answer_pattern())) return std::nullopt;
  return MatchDecision{Matched{m[1].str()}};
}

bool is_yes_no(std::string_view response) {
  const std::string s = to_lower(trim(response));
  return s.rfind("yes", 0) == 0 || s.rfind("no", 0) == 0;
}

}  // namespace

std::optional<CncViolation> validate_output_format(std::string_view response, OutputContext context,
                                                   const std::string& quoted_step,
                                                   const std::string& unmatched_token) {
  bool ok = false;
  switch (context) {
    case OutputContext::Step:
      try {
        parse_logic_step(trim(response));
        ok = true;
      } catch (const FormatError&) {
        ok = false;
      }
      break;
    case OutputContext::WidgetId: ok = parse_widget_answer(response, unmatched_token).has_value(); break;
    case OutputContext::YesNo: ok = is_yes_no(response); break;
    case OutputContext::ItemId: ok = parse_item_answer(response, unmatched_token).has_value(); break;
  }
  if (ok) return std::nullopt;
  return CncViolation{CncRule::IncorrectFormat, feedback::incorrect_format(quoted_step)};
}

std::string describe_state(const GuiState& state, bool include_actions) {
  std::string out;
  for (const StateWidget* w : reading_order(state)) {
    std::string line = "[" + w->widget_id + "]";
    std::string sep = " ";
    auto attr = [&](const char* label, const std::optional<std::string>& v) {
      if (!v) return;
      line += fmt::format("{}{}: \"{}\"", sep, label, *v);
      sep = " | ";
    };
    attr("text", w->text);
    attr("content-desc", w->content_desc);
    attr("resource-id", w->resource_id);
    if (include_actions) {
      std::string actions;
      for (auto a : w->supported_actions) actions += (actions.empty() ? "" : ", ") + std::string(action_token(a));
      line += sep + "actions: " + (actions.empty() ? "none" : actions);
    }
    out += line + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

std::size_t MigrationTrace::count(Route route) const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(), [&](const StepTrace& s) { return s.route == route; }));
}

std::size_t MigrationTrace::skipped() const {
  return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const StepTrace& s) { return s.skipped; }));
}

Json MigrationTrace::to_json() const {
  Json out = Json::object();
  out["steps"] = Json::array();
  for (const auto& s : steps) {
    Json j = Json::object();
    j["step"] = s.step_index;
    j["text"] = s.step_text;
    j["route"] = route_name(s.route);
    j["match_response"] = s.match_response;
    j["matched_item"] = s.matched_item ? Json(*s.matched_item) : Json(nullptr);
    j["grounding_failed"] = s.grounding_failed;
    j["violations"] = Json::array();
    for (const auto& v : s.violations) j["violations"].push_back({{"rule", rule_name(v.rule)}, {"feedback", v.feedback_text}});
    j["llm_reasks"] = s.llm_reasks;
    j["selection_rounds"] = s.selection_rounds;
    j["executions"] = s.executions;
    j["completion_checks"] = s.completion_checks;
    j["backtrack_depth"] = s.backtrack_depth;
    j["confirmed"] = s.confirmed;
    j["skipped"] = s.skipped;
    j["events_emitted"] = s.events_emitted;
    j["assertions_emitted"] = s.assertions_emitted;
    out["steps"].push_back(std::move(j));
  }
  out["matched_steps"] = count(Route::Matched);
  out["completion_steps"] = count(Route::Completion);
  out["skipped_steps"] = skipped();
  out["device_resets"] = device_resets;
  out["token_usage"] = {{"prompt_tokens", token_usage.prompt_tokens},
                        {"completion_tokens", token_usage.completion_tokens},
                        {"total_tokens", token_usage.total()},
                        {"requests", token_usage.requests}};
  return out;
}

MigrationAborted::MigrationAborted(const std::string& message, ConcretizeResult partial)
    : DriverError(message), partial_(std::move(partial)) {}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

namespace {

std::string step_line(const LogicStep& step) { return fmt::format("Step {}: {}", step.index, render_logic_step(step)); }

std::string render_item(const TestStep& item) { return render_logic_step(logic_step_of(item, 1)); }

std::string matching_prompt(const LogicStep& step, const PrivilegedSet& privileged, const MigrationSubject& subject,
                            const ConcretizerConfig& config) {
  PromptBundle b;
  b.task_description = fmt::format(
      "You are migrating a GUI test of the functionality \"{}\" to a {} app. Match the current test step with one "
      "of the candidate events and assertions produced by an existing test migration tool.",
      subject.functionality, subject.category);
  std::string candidates;
  for (const PrivilegedItem* item : privileged.unconsumed())
    candidates += fmt::format("{}: {}\n", item->item_id, render_item(item->payload));
  if (candidates.empty()) candidates = "(none)\n";
  b.input_object = fmt::format("Current test step: {}\nCandidate events and assertions:\n{}", step_line(step),
                               trim(candidates));
  b.output_example = "P2";
  b.output_requirement = fmt::format(
      "1. A test step does not always have a matching candidate. Reply {} when no candidate fits the step.\n"
      "2. An event step may only match an event and an assertion step may only match an assertion.\n"
      "Reply with the candidate id only.",
      config.unmatched_token);
  return assemble_prompt(b);
}

std::string selection_prompt(const LogicStep& step, const GenerationContext& ctx, const MigrationSubject& subject,
                             const ConcretizerConfig& config) {
  PromptBundle b;
  b.task_description = fmt::format(
      "You are testing the functionality \"{}\" of a {} app. Choose the widget to operate in the current GUI state "
      "so that the current test step is carried out.",
      subject.functionality, subject.category);
  std::string previous;
  for (std::size_t i = 0; i < ctx.chosen_events.size(); ++i)
    previous += fmt::format("{}. {}\n", i + 1, render_item(ctx.chosen_events[i].as_step()));
  if (previous.empty()) previous = "(none)\n";
  b.input_object = fmt::format(
      "Current test step: {}\nEvents selected so far:\n{}Current GUI state ({}), widgets from the top-left to the "
      "bottom-right:\n{}",
      step_line(step), previous, ctx.current().state_id, trim(describe_state(ctx.current(), true)));
  b.output_example = "[new_note]\n[note_title] edit with [groceries]";
  b.output_requirement = fmt::format(
      "Reply with one line: the id of a widget listed in the current GUI state, optionally followed by one of its "
      "actions and, for edit, \"with [value]\". Do not repeat an event that is already selected unless the step "
      "needs it. Reply {} if no widget fits.",
      config.unmatched_token);
  return assemble_prompt(b);
}

std::string widget_prompt(const LogicStep& step, const GuiState& shown, std::string_view state_note,
                          const MigrationSubject& subject, const ConcretizerConfig& config) {
  PromptBundle b;
  b.task_description = fmt::format(
      "You are testing the functionality \"{}\" of a {} app. Choose the widget that the current assertion step "
      "checks.",
      subject.functionality, subject.category);
  b.input_object = fmt::format("Current test step: {}\n{}\n{}", step_line(step), state_note,
                               trim(describe_state(shown, false)));
  b.output_example = "[note_title]";
  b.output_requirement =
      fmt::format("Reply with the id of one listed widget only. Reply {} if no listed widget fits.", config.unmatched_token);
  return assemble_prompt(b);
}

std::string generated_list(const std::vector<TestStep>& generated) {
  std::string out;
  for (const auto& g : generated) out += (out.empty() ? "" : "; ") + render_item(g);
  return "[" + out + "]";
}

std::vector<TestStep> step_items(const GenerationContext& ctx, std::size_t from) {
  return {ctx.emitted.begin() + static_cast<std::ptrdiff_t>(std::min(from, ctx.emitted.size())), ctx.emitted.end()};
}

struct StepMark {
  std::size_t events;
  std::size_t assertions;
  std::size_t emitted;
};

StepMark mark_of(const GenerationContext& ctx) {
  return {ctx.chosen_events.size(), ctx.chosen_assertions.size(), ctx.emitted.size()};
}

/// Truncates `ctx` back to `mark`; replays the remaining events from reset
/// when events were removed.
void roll_back(GenerationContext& ctx, Device& device, const StepMark& mark, std::size_t& resets) {
  const bool events_removed = ctx.chosen_events.size() > mark.events;
  ctx.chosen_events.resize(mark.events);
  ctx.chosen_assertions.resize(mark.assertions);
  ctx.emitted.resize(mark.emitted);
  ctx.state_history.resize(mark.events + 1);
  if (!events_removed) return;

  ++resets;
  ctx.state_history[0] = device.reset();
  for (std::size_t i = 0; i < ctx.chosen_events.size(); ++i) {
    ExecOutcome outcome = device.execute(ctx.chosen_events[i]);
    if (!outcome.is_ok())
      throw DriverError(fmt::format("replay after rollback rejected event {}: {}", i + 1, outcome.reason()));
    ctx.state_history[i + 1] = outcome.state();
  }
}

void append_event(GenerationContext& ctx, ConcreteEvent event, GuiState next) {
  ctx.emitted.push_back(event.as_step());
  ctx.chosen_events.push_back(std::move(event));
  ctx.state_history.push_back(std::move(next));
}

void append_assertion(GenerationContext& ctx, ConcreteAssertion assertion) {
  ctx.emitted.push_back(assertion.as_step());
  ctx.chosen_assertions.push_back(std::move(assertion));
}

/// Asks `prompt`; on a format violation re-asks once with the canonical
/// feedback. Returns the last response, or nullopt when it is still malformed.
std::optional<std::string> ask_formatted(LlmSession& session, const std::string& prompt, OutputContext context,
                                         const LogicStep& step, const ConcretizerConfig& config, StepTrace& trace) {
  std::string response = session.ask(prompt);
  auto violation = validate_output_format(response, context, feedback::quote_step(step), config.unmatched_token);
  if (!violation) return response;
  trace.violations.push_back(*violation);
  ++trace.llm_reasks;
  response = session.follow_up(prompt, response, violation->feedback_text);
  if (validate_output_format(response, context, feedback::quote_step(step), config.unmatched_token))
    return std::nullopt;
  return response;
}

std::optional<ActionKind> choose_action(const LogicStep& step, const StateWidget& widget,
                                        const std::optional<ActionKind>& explicit_action) {
  if (explicit_action) return widget.supports(*explicit_action) ? explicit_action : std::nullopt;
  for (auto a : step.action_alternatives) {
    if (widget.supports(a)) return a;
  }
  if (widget.supported_actions.size() == 1) return widget.supported_actions.front();
  return std::nullopt;
}

/// Runs the completion check for the items generated since `from` and
/// records a violation on "no".
bool confirm(const LogicStep& step, const GenerationContext& ctx, std::size_t from, LlmSession& session,
             StepTrace& trace) {
  return check_completion(step, step_items(ctx, from), session, &trace);
}

}  // namespace

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

MatchDecision match_step(const LogicStep& step, PrivilegedSet& privileged, LlmSession& session,
                         const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace) {
  const std::string prompt = matching_prompt(step, privileged, subject, config);
  const std::string quoted = feedback::quote_step(step);
  std::set<CncRule> reasked;
  std::string response = session.ask(prompt);

  for (;;) {
    if (auto fmt_violation = validate_output_format(response, OutputContext::ItemId, quoted, config.unmatched_token)) {
      trace.violations.push_back(*fmt_violation);
      if (!reasked.insert(CncRule::IncorrectFormat).second) break;
      ++trace.llm_reasks;
      response = session.follow_up(prompt, response, fmt_violation->feedback_text);
      continue;
    }
    MatchDecision decision = *parse_item_answer(response, config.unmatched_token);
    auto violations = validate_match(step, decision, privileged);
    if (violations.empty()) {
      if (const auto* m = std::get_if<Matched>(&decision)) {
        privileged.find(m->item_id)->consumed = true;
        trace.matched_item = m->item_id;
        trace.match_response = m->item_id;
      } else {
        trace.match_response = config.unmatched_token;
      }
      return decision;
    }
    const CncViolation& v = violations.front();
    trace.violations.push_back(v);
    if (!reasked.insert(v.rule).second) break;
    ++trace.llm_reasks;
    response = session.follow_up(prompt, response, v.feedback_text);
  }
  spdlog::debug("step {}: matching degraded to unmatched", step.index);
  trace.match_response = config.unmatched_token;
  return Unmatched{};
}

bool check_completion(const LogicStep& step, const std::vector<TestStep>& generated, LlmSession& session,
                      StepTrace* trace) {
  const std::string prompt = feedback::completion_check(generated_list(generated), feedback::quote_step(step));
  const std::string answer = to_lower(trim(session.ask(prompt)));
  const bool yes = answer.rfind("yes", 0) == 0;
  if (trace) {
    ++trace->completion_checks;
    if (!yes) trace->violations.push_back({CncRule::CompletionUnconfirmed, prompt});
  }
  return yes;
}

// ---------------------------------------------------------------------------
// Completion
// ---------------------------------------------------------------------------

namespace {

struct StepScope {
  StepMark mark;
  std::size_t resets = 0;
};

// Completion rounds for an event step; the caller owns the rollback mark.
bool event_rounds(const LogicStep& step, GenerationContext& ctx, Device& device, LlmSession& session,
                  const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace,
                  std::size_t step_begin) {
  for (int round = 0; round < config.max_selection; ++round) {
    ++trace.selection_rounds;
    const std::string prompt = selection_prompt(step, ctx, subject, config);
    auto response = ask_formatted(session, prompt, OutputContext::WidgetId, step, config, trace);
    if (!response) continue;
    auto answer = parse_widget_answer(*response, config.unmatched_token);
    if (!answer || answer->unmatched) continue;

    const GuiState& current = ctx.current();
    const StateWidget* widget = current.find(answer->widget_id);
    if (!widget) {
      spdlog::debug("step {}: unknown widget \"{}\"", step.index, answer->widget_id);
      continue;
    }
    // The emitted case is replayed by identity; an ambiguous identity could
    // resolve to another widget.
    const StateWidget* grounded = current.find_same(widget->ref());
    if (!grounded || grounded->widget_id != widget->widget_id) {
      spdlog::debug("step {}: widget \"{}\" is not identifiable", step.index, widget->widget_id);
      continue;
    }
    auto action = choose_action(step, *widget, answer->action);
    if (!action) continue;
    std::optional<std::string> value;
    if (*action == ActionKind::Edit) {
      value = step.value_phrase ? step.value_phrase : answer->value;
      if (!value) continue;
    }

    ConcreteEvent event = make_event(current, *widget, *action, value);
    ++trace.executions;
    ExecOutcome outcome = device.execute(event);
    if (!outcome.is_ok()) {
      spdlog::debug("step {}: execution rejected: {}", step.index, outcome.reason());
      continue;
    }
    append_event(ctx, std::move(event), outcome.state());
    if (confirm(step, ctx, step_begin, session, trace)) return true;
  }
  return false;
}

bool assertion_rounds(const LogicStep& step, GenerationContext& ctx, LlmSession& session,
                      const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace,
                      std::size_t step_begin) {
  const ConditionKind condition = condition_from_phrase(step.condition_phrase.value_or("appears"));
  const GuiState current = ctx.current();

  if (condition == ConditionKind::Present) {
    for (int round = 0; round < config.max_selection; ++round) {
      ++trace.selection_rounds;
      const std::string prompt = widget_prompt(
          step, current, fmt::format("Current GUI state ({}), widgets from the top-left to the bottom-right:", current.state_id),
          subject, config);
      auto response = ask_formatted(session, prompt, OutputContext::WidgetId, step, config, trace);
      if (!response) continue;
      auto answer = parse_widget_answer(*response, config.unmatched_token);
      if (!answer || answer->unmatched) continue;
      const StateWidget* widget = current.find(answer->widget_id);
      if (!widget) continue;
      ConcreteAssertion assertion{widget->ref(), ConditionKind::Present};
      if (!holds(assertion, current)) continue;
      append_assertion(ctx, std::move(assertion));
      if (confirm(step, ctx, step_begin, session, trace)) return true;
    }
    return false;
  }

  // Absence: walk back through earlier states, offering widgets that are no
  // longer on screen.
  std::vector<WidgetRef> offered;
  int rounds = 0;
  for (std::size_t back = 1; back < ctx.state_history.size() && rounds < config.max_selection;) {
    const GuiState& earlier = ctx.state_history[ctx.state_history.size() - 1 - back];
    GuiState candidates{earlier.state_id, {}};
    for (const auto& w : earlier.widgets) {
      if (current.find_same(w.ref())) continue;
      const bool seen = std::any_of(offered.begin(), offered.end(), [&](const WidgetRef& r) { return same_widget(r, w.ref()); });
      if (!seen) candidates.widgets.push_back(w);
    }
    if (candidates.widgets.empty()) {
      ++back;
      continue;
    }
    trace.backtrack_depth = back;
    const std::string prompt = widget_prompt(
        step, candidates,
        fmt::format("The step checks that a widget has disappeared. These widgets were shown in an earlier GUI state "
                    "({}, {} event(s) back) and are not in the current GUI state:",
                    earlier.state_id, back),
        subject, config);
    auto response = ask_formatted(session, prompt, OutputContext::WidgetId, step, config, trace);
    auto answer = response ? parse_widget_answer(*response, config.unmatched_token) : std::nullopt;
    if (answer && answer->unmatched) {
      for (const auto& w : candidates.widgets) offered.push_back(w.ref());
      ++back;
      continue;
    }
    ++rounds;
    ++trace.selection_rounds;
    const StateWidget* widget = answer ? candidates.find(answer->widget_id) : nullptr;
    if (!widget) continue;
    ConcreteAssertion assertion{widget->ref(), ConditionKind::Absent};
    if (!holds(assertion, current)) continue;
    append_assertion(ctx, std::move(assertion));
    if (confirm(step, ctx, step_begin, session, trace)) return true;
    for (const auto& w : candidates.widgets) offered.push_back(w.ref());
    ++back;
  }
  return false;
}

}  // namespace

StepStatus select_event(const LogicStep& step, GenerationContext& ctx, Device& device, LlmSession& session,
                        const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace) {
  const StepMark mark = mark_of(ctx);
  if (event_rounds(step, ctx, device, session, config, subject, trace, mark.emitted)) return StepStatus::Confirmed;
  std::size_t resets = 0;
  roll_back(ctx, device, mark, resets);
  ctx.skipped_steps.push_back(step.index);
  return StepStatus::Skipped;
}

StepStatus generate_assertion(const LogicStep& step, GenerationContext& ctx, Device& device, LlmSession& session,
                              const ConcretizerConfig& config, const MigrationSubject& subject, StepTrace& trace) {
  const StepMark mark = mark_of(ctx);
  if (assertion_rounds(step, ctx, session, config, subject, trace, mark.emitted)) return StepStatus::Confirmed;
  std::size_t resets = 0;
  roll_back(ctx, device, mark, resets);
  ctx.skipped_steps.push_back(step.index);
  return StepStatus::Skipped;
}

// ---------------------------------------------------------------------------
// Concretize
// ---------------------------------------------------------------------------

namespace {

/// Executes or evaluates a matched privileged item on the current state.
/// Returns false when the item cannot be grounded.
bool ground_matched(const PrivilegedItem& item, const LogicStep& step, GenerationContext& ctx, Device& device,
                    StepTrace& trace) {
  const GuiState& current = ctx.current();
  if (const auto* e = std::get_if<EventStep>(&item.payload)) {
    const StateWidget* widget = current.find_same(e->widget);
    if (!widget || !widget->supports(e->action)) return false;
    std::optional<std::string> value = e->value;
    if (e->action == ActionKind::Edit && !value) value = step.value_phrase;
    if (e->action == ActionKind::Edit && !value) return false;
    if (e->action != ActionKind::Edit) value.reset();
    ConcreteEvent event = make_event(current, *widget, e->action, value);
    ++trace.executions;
    ExecOutcome outcome = device.execute(event);
    if (!outcome.is_ok()) return false;
    append_event(ctx, std::move(event), outcome.state());
    return true;
  }
  const auto& a = std::get<AssertionStep>(item.payload);
  ConcreteAssertion assertion{a.widget, a.condition};
  if (a.condition == ConditionKind::Absent) {
    const bool seen_before = std::any_of(ctx.state_history.begin(), ctx.state_history.end() - 1,
                                         [&](const GuiState& s) { return s.find_same(a.widget) != nullptr; });
    if (!seen_before) return false;
  } else if (const StateWidget* w = current.find_same(a.widget)) {
    assertion.widget = w->ref();
  }
  if (!holds(assertion, current)) return false;
  append_assertion(ctx, std::move(assertion));
  return true;
}

}  // namespace

ConcretizeResult concretize(const TestLogic& general, PrivilegedSet privileged, Device& device, LlmSession& session,
                            const ConcretizerConfig& config, const std::string& target_app_id) {
  config.validate();
  const TokenUsage usage_before = session.usage();
  const MigrationSubject subject{general.functionality, general.category};

  ConcretizeResult result;
  result.test_case.app_id = target_app_id;
  result.test_case.category = general.category;
  result.test_case.functionality = general.functionality;

  GenerationContext ctx;
  auto finish = [&] {
    result.test_case.steps = ctx.emitted;
    TokenUsage used = session.usage();
    used.prompt_tokens -= usage_before.prompt_tokens;
    used.completion_tokens -= usage_before.completion_tokens;
    used.requests -= usage_before.requests;
    result.trace.token_usage = used;
  };

  try {
    ctx.state_history.push_back(device.reset());
    ++result.trace.device_resets;

    for (const LogicStep& step : general.steps) {
      StepTrace trace;
      trace.step_index = step.index;
      trace.step_text = render_logic_step(step);
      const StepMark mark = mark_of(ctx);

      MatchDecision decision = match_step(step, privileged, session, config, subject, trace);
      bool confirmed = false;
      bool need_completion = true;
      if (const auto* m = std::get_if<Matched>(&decision)) {
        trace.route = Route::Matched;
        if (ground_matched(*privileged.find(m->item_id), step, ctx, device, trace)) {
          confirmed = confirm(step, ctx, mark.emitted, session, trace);
          need_completion = !confirmed;
        } else {
          // The decision stays Matched; the step falls back to completion.
          trace.grounding_failed = true;
        }
      } else {
        trace.route = Route::Completion;
      }

      if (need_completion) {
        confirmed = step.kind == StepKind::Event
                        ? event_rounds(step, ctx, device, session, config, subject, trace, mark.emitted)
                        : assertion_rounds(step, ctx, session, config, subject, trace, mark.emitted);
      }

      if (confirmed) {
        trace.confirmed = true;
      } else {
        trace.skipped = true;
        roll_back(ctx, device, mark, result.trace.device_resets);
        ctx.skipped_steps.push_back(step.index);
      }
      for (std::size_t i = mark.emitted; i < ctx.emitted.size(); ++i) {
        if (kind_of(ctx.emitted[i]) == StepKind::Event) ++trace.events_emitted;
        else ++trace.assertions_emitted;
      }
      result.trace.steps.push_back(std::move(trace));
    }
  } catch (const DriverError& e) {
    finish();
    throw MigrationAborted(e.what(), std::move(result));
  }
  finish();
  return result;
}

}  // namespace migratekit
