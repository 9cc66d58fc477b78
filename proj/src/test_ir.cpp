#include "migratekit/test_ir.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include <fmt/format.h>

#include "migratekit/errors.hpp"

namespace migratekit {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::optional<std::string> clean_attribute(std::optional<std::string> value) {
  if (!value) return std::nullopt;
  std::string trimmed = trim(*value);
  if (trimmed.empty()) return std::nullopt;
  return trimmed;
}

// Bracket characters would break the step templates; newlines would break
// the one-line rendering.
std::string sanitize_phrase(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c == '[') c = '(';
    else if (c == ']') c = ')';
    else if (c == '\n' || c == '\r' || c == '\t') c = ' ';
  }
  return trim(out);
}

const std::regex& event_pattern() {
  static const std::regex re(
      R"(^\s*(?:[-*]\s*)?(?:(?:step\s*)?\d+\s*[:.)\-]\s*)?\(\s*event\s*\)\s*(.*?)\s+a\s+widget\s*\[([^\[\]]*)\](?:\s*with\s*\[([^\[\]]*)\])?\s*[.;,]?\s*$)",
      std::regex::ECMAScript | std::regex::icase);
  return re;
}

const std::regex& assertion_pattern() {
  static const std::regex re(
      R"(^\s*(?:[-*]\s*)?(?:(?:step\s*)?\d+\s*[:.)\-]\s*)?\(\s*assertion\s*\)\s*(.*?)\s+a\s+widget\s*\[([^\[\]]*)\]\s*\[([^\[\]]*)\]\s*[.;,]?\s*$)",
      std::regex::ECMAScript | std::regex::icase);
  return re;
}

std::vector<std::string> split_alternatives(const std::string& phrase) {
  static const std::regex sep(R"(\s+or\s+)", std::regex::ECMAScript | std::regex::icase);
  std::vector<std::string> parts;
  std::sregex_token_iterator it(phrase.begin(), phrase.end(), sep, -1), end;
  for (; it != end; ++it) parts.push_back(trim(it->str()));
  return parts;
}

const std::string& require_string(const Json& doc, const char* key, const std::string& path) {
  auto it = doc.find(key);
  if (it == doc.end()) throw SchemaError(path + "." + key, "missing field");
  if (!it->is_string()) throw SchemaError(path + "." + key, "expected a string");
  return it->get_ref<const std::string&>();
}

std::optional<std::string> optional_string(const Json& doc, const char* key, const std::string& path) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw SchemaError(path + "." + key, "expected a string");
  return it->get<std::string>();
}

}  // namespace

std::string trim(std::string_view text) {
  std::size_t begin = 0, end = text.size();
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view action_word(ActionKind kind) {
  switch (kind) {
    case ActionKind::Click: return "Click";
    case ActionKind::Edit: return "Edit";
    case ActionKind::Swipe: return "Swipe";
    case ActionKind::Scroll: return "Scroll";
    case ActionKind::LongPress: return "Long-press";
  }
  return "Click";
}

std::string_view action_token(ActionKind kind) {
  switch (kind) {
    case ActionKind::Click: return "click";
    case ActionKind::Edit: return "edit";
    case ActionKind::Swipe: return "swipe";
    case ActionKind::Scroll: return "scroll";
    case ActionKind::LongPress: return "long-press";
  }
  return "click";
}

std::optional<ActionKind> parse_action(std::string_view word) {
  const std::string w = to_lower(trim(word));
  if (w == "click") return ActionKind::Click;
  if (w == "edit") return ActionKind::Edit;
  if (w == "swipe") return ActionKind::Swipe;
  if (w == "scroll") return ActionKind::Scroll;
  if (w == "long-press" || w == "long press" || w == "longpress") return ActionKind::LongPress;
  return std::nullopt;
}

std::string_view condition_token(ConditionKind kind) {
  return kind == ConditionKind::Present ? "present" : "absent";
}

std::string_view condition_phrase(ConditionKind kind) {
  return kind == ConditionKind::Present ? "appears" : "disappears";
}

ConditionKind condition_from_phrase(std::string_view phrase) {
  const std::string p = to_lower(phrase);
  for (const char* negative : {"disappear", "absent", "not ", "no longer", "gone", "removed", "deleted"}) {
    if (p.find(negative) != std::string::npos) return ConditionKind::Absent;
  }
  return ConditionKind::Present;
}

std::string_view step_kind_name(StepKind kind) { return kind == StepKind::Event ? "event" : "assertion"; }

WidgetRef WidgetRef::make(std::optional<std::string> text, std::optional<std::string> content_desc,
                          std::optional<std::string> resource_id) {
  WidgetRef ref{clean_attribute(std::move(text)), clean_attribute(std::move(content_desc)),
                clean_attribute(std::move(resource_id))};
  if (ref.empty()) throw SchemaError("widget", "widget has no text, content_desc or resource_id");
  return ref;
}

std::string WidgetRef::phrase() const {
  std::string out;
  for (const auto* attr : {&text, &content_desc, &resource_id}) {
    if (!*attr) continue;
    if (!out.empty()) out += " | ";
    out += sanitize_phrase(**attr);
  }
  return out;
}

bool same_widget(const WidgetRef& a, const WidgetRef& b) {
  if (a.resource_id && b.resource_id) return *a.resource_id == *b.resource_id;
  return a.text == b.text && a.content_desc == b.content_desc;
}

const WidgetRef& widget_of(const TestStep& step) {
  return std::visit([](const auto& s) -> const WidgetRef& { return s.widget; }, step);
}

std::size_t TestCase::event_count() const {
  return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const TestStep& s) {
    return kind_of(s) == StepKind::Event;
  }));
}

std::size_t TestCase::assertion_count() const { return steps.size() - event_count(); }

// ---------------------------------------------------------------------------
// Test-case documents
// ---------------------------------------------------------------------------

Json to_json(const WidgetRef& widget) {
  Json out = Json::object();
  if (widget.text) out["text"] = *widget.text;
  if (widget.content_desc) out["content_desc"] = *widget.content_desc;
  if (widget.resource_id) out["resource_id"] = *widget.resource_id;
  return out;
}

WidgetRef widget_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object()) throw SchemaError(path, "expected an object");
  auto text = optional_string(doc, "text", path);
  auto desc = optional_string(doc, "content_desc", path);
  auto rid = optional_string(doc, "resource_id", path);
  try {
    return WidgetRef::make(std::move(text), std::move(desc), std::move(rid));
  } catch (const SchemaError&) {
    throw SchemaError(path, "widget has no text, content_desc or resource_id");
  }
}

Json to_json(const TestStep& step) {
  Json out = Json::object();
  if (const auto* e = std::get_if<EventStep>(&step)) {
    out["type"] = "event";
    out["widget"] = to_json(e->widget);
    out["action"] = action_token(e->action);
    if (e->value) out["value"] = *e->value;
  } else {
    const auto& a = std::get<AssertionStep>(step);
    out["type"] = "assertion";
    out["widget"] = to_json(a.widget);
    out["condition"] = condition_token(a.condition);
  }
  return out;
}

TestStep step_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object()) throw SchemaError(path, "expected an object");
  const std::string& type = require_string(doc, "type", path);
  auto widget_it = doc.find("widget");
  if (widget_it == doc.end()) throw SchemaError(path + ".widget", "missing field");
  WidgetRef widget = widget_from_json(*widget_it, path + ".widget");

  if (type == "event") {
    const std::string& action_text = require_string(doc, "action", path);
    auto action = parse_action(action_text);
    if (!action) throw SchemaError(path + ".action", "unknown action \"" + action_text + "\"");
    auto value = optional_string(doc, "value", path);
    if (*action == ActionKind::Edit && !value)
      throw SchemaError(path + ".value", "edit event requires a value");
    if (*action != ActionKind::Edit && value)
      throw SchemaError(path + ".value", "only edit events carry a value");
    return EventStep{std::move(widget), *action, std::move(value)};
  }
  if (type == "assertion") {
    const std::string& condition = require_string(doc, "condition", path);
    if (condition == "present") return AssertionStep{std::move(widget), ConditionKind::Present};
    if (condition == "absent") return AssertionStep{std::move(widget), ConditionKind::Absent};
    throw SchemaError(path + ".condition", "unknown condition \"" + condition + "\"");
  }
  throw SchemaError(path + ".type", "unknown step type \"" + type + "\"");
}

TestCase test_case_from_json(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("", "test case must be an object");
  TestCase out;
  out.app_id = require_string(doc, "app_id", "");
  out.category = require_string(doc, "category", "");
  out.functionality = require_string(doc, "functionality", "");
  auto steps = doc.find("steps");
  if (steps == doc.end()) throw SchemaError("steps", "missing field");
  if (!steps->is_array() || steps->empty()) throw SchemaError("steps", "expected a non-empty array");
  for (std::size_t i = 0; i < steps->size(); ++i)
    out.steps.push_back(step_from_json((*steps)[i], fmt::format("steps[{}]", i)));
  return out;
}

TestCase parse_test_case(std::string_view document) {
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw SchemaError("", std::string("malformed document: ") + e.what());
  }
  return test_case_from_json(doc);
}

Json to_json(const TestCase& test_case) {
  Json out = Json::object();
  out["app_id"] = test_case.app_id;
  out["category"] = test_case.category;
  out["functionality"] = test_case.functionality;
  out["steps"] = Json::array();
  for (const auto& step : test_case.steps) out["steps"].push_back(to_json(step));
  return out;
}

// ---------------------------------------------------------------------------
// Logic steps
// ---------------------------------------------------------------------------

LogicStep logic_step_of(const TestStep& step, std::size_t index) {
  LogicStep out;
  out.index = index;
  if (const auto* e = std::get_if<EventStep>(&step)) {
    out.kind = StepKind::Event;
    out.action_alternatives = {e->action};
    out.widget_phrase = e->widget.phrase();
    if (e->value) {
      std::string v = sanitize_phrase(*e->value);
      if (!v.empty()) out.value_phrase = std::move(v);
    }
  } else {
    const auto& a = std::get<AssertionStep>(step);
    out.kind = StepKind::Assertion;
    out.widget_phrase = a.widget.phrase();
    out.condition_phrase = std::string(condition_phrase(a.condition));
  }
  return out;
}

TestLogic extract_logic(const TestCase& test_case) {
  TestLogic logic;
  logic.functionality = test_case.functionality;
  logic.category = test_case.category;
  logic.provenance = IndividualProvenance{test_case.app_id};
  logic.steps.reserve(test_case.steps.size());
  for (std::size_t i = 0; i < test_case.steps.size(); ++i)
    logic.steps.push_back(logic_step_of(test_case.steps[i], i + 1));
  return logic;
}

std::string render_logic_step(const LogicStep& step) {
  std::string actions;
  if (step.raw_action) {
    actions = *step.raw_action;
  } else if (step.kind == StepKind::Assertion) {
    actions = "Check";
  } else {
    for (std::size_t i = 0; i < step.action_alternatives.size(); ++i) {
      if (i) actions += " or ";
      actions += action_word(step.action_alternatives[i]);
    }
  }

  if (step.kind == StepKind::Event) {
    std::string out = fmt::format("(Event) {} a widget [{}]", actions, step.widget_phrase);
    if (step.value_phrase) out += fmt::format(" with [{}]", *step.value_phrase);
    return out;
  }
  return fmt::format("(Assertion) {} a widget [{}] [{}]", actions, step.widget_phrase,
                     step.condition_phrase.value_or(""));
}

bool looks_like_step(std::string_view line) {
  const std::string l = to_lower(line);
  return l.find("(event)") != std::string::npos || l.find("(assertion)") != std::string::npos;
}

LogicStep parse_logic_step(std::string_view line, std::size_t index) {
  const std::string text(line);
  if (trim(text).empty()) throw FormatError(text);

  std::smatch m;
  LogicStep out;
  out.index = index;
  if (std::regex_match(text, m, event_pattern())) {
    out.kind = StepKind::Event;
    const std::string phrase = trim(m[1].str());
    out.widget_phrase = trim(m[2].str());
    if (phrase.empty() || out.widget_phrase.empty()) throw FormatError(text);
    if (m[3].matched) {
      std::string value = trim(m[3].str());
      if (!value.empty()) out.value_phrase = std::move(value);
    }
    bool canonical = true;
    for (const auto& word : split_alternatives(phrase)) {
      if (auto kind = parse_action(word)) {
        out.action_alternatives.push_back(*kind);
      } else {
        canonical = false;
      }
    }
    if (!canonical) out.raw_action = phrase;
    return out;
  }
  if (std::regex_match(text, m, assertion_pattern())) {
    out.kind = StepKind::Assertion;
    const std::string phrase = trim(m[1].str());
    out.widget_phrase = trim(m[2].str());
    std::string condition = trim(m[3].str());
    if (phrase.empty() || out.widget_phrase.empty() || condition.empty()) throw FormatError(text);
    out.condition_phrase = std::move(condition);
    if (to_lower(phrase) != "check") out.raw_action = phrase;
    return out;
  }
  throw FormatError(text);
}

std::string render_steps(const TestLogic& logic) {
  std::string out;
  for (const auto& step : logic.steps) out += fmt::format("Step {}: {}\n", step.index, render_logic_step(step));
  return out;
}

std::string write_logic_file(const TestLogic& logic) {
  std::string out;
  out += "# functionality: " + logic.functionality + "\n";
  out += "# category: " + logic.category + "\n";
  if (const auto* ind = std::get_if<IndividualProvenance>(&logic.provenance)) {
    out += "# provenance: individual " + ind->app_id + "\n";
  } else {
    const auto& gen = std::get<GeneralProvenance>(logic.provenance);
    std::string ids;
    for (std::size_t i = 0; i < gen.app_ids.size(); ++i) ids += (i ? "," : "") + gen.app_ids[i];
    out += "# provenance: general " + ids + "\n";
  }
  out += render_steps(logic);
  return out;
}

TestLogic read_logic_file(std::string_view text) {
  TestLogic logic;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const std::string body = trim(std::string_view(t).substr(1));
      const auto colon = body.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = trim(std::string_view(body).substr(0, colon));
      const std::string value = trim(std::string_view(body).substr(colon + 1));
      if (key == "functionality") {
        logic.functionality = value;
      } else if (key == "category") {
        logic.category = value;
      } else if (key == "provenance") {
        const auto space = value.find(' ');
        const std::string kind = value.substr(0, space);
        const std::string rest = space == std::string::npos ? "" : trim(value.substr(space + 1));
        if (kind == "individual") {
          logic.provenance = IndividualProvenance{rest};
        } else if (kind == "general") {
          GeneralProvenance gen;
          std::istringstream ids(rest);
          std::string id;
          while (std::getline(ids, id, ',')) {
            if (!trim(id).empty()) gen.app_ids.push_back(trim(id));
          }
          logic.provenance = std::move(gen);
        } else {
          throw SchemaError(fmt::format("line {}", line_no), "unknown provenance \"" + kind + "\"");
        }
      }
      continue;
    }
    try {
      logic.steps.push_back(parse_logic_step(t, logic.steps.size() + 1));
    } catch (const FormatError& e) {
      throw SchemaError(fmt::format("line {}", line_no), e.what());
    }
  }
  return logic;
}

}  // namespace migratekit
