#pragma once

#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "migratekit/test_ir.hpp"

namespace migratekit {

struct Bounds {
  int left = 0;
  int top = 0;
  int right = 1;
  int bottom = 1;

  bool well_ordered() const noexcept { return left < right && top < bottom; }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

struct StateWidget {
  std::string widget_id;
  std::optional<std::string> text;
  std::optional<std::string> content_desc;
  std::optional<std::string> resource_id;
  Bounds bounds;
  std::vector<ActionKind> supported_actions;  // sorted, unique

  WidgetRef ref() const { return WidgetRef{text, content_desc, resource_id}; }
  bool supports(ActionKind action) const;

  friend bool operator==(const StateWidget&, const StateWidget&) = default;
};

struct GuiState {
  std::string state_id;
  std::vector<StateWidget> widgets;

  const StateWidget* find(std::string_view widget_id) const;
  /// First widget, in (top, left) order, that has the same identity as `ref`.
  const StateWidget* find_same(const WidgetRef& ref) const;

  friend bool operator==(const GuiState&, const GuiState&) = default;
};

/// Throws SchemaError when widget ids repeat, a widget has no semantic
/// attribute or its bounds are not well ordered.
void validate_state(const GuiState& state);
/// Widgets sorted by (top, left), i.e. reading order.
std::vector<const StateWidget*> reading_order(const GuiState& state);

struct ConcreteEvent {
  std::string widget_id;
  std::string state_id;  // state in which the widget was observed
  WidgetRef widget;
  ActionKind action = ActionKind::Click;
  std::optional<std::string> value;

  EventStep as_step() const { return EventStep{widget, action, value}; }
  friend bool operator==(const ConcreteEvent&, const ConcreteEvent&) = default;
};

struct ConcreteAssertion {
  WidgetRef widget;
  ConditionKind condition = ConditionKind::Present;

  AssertionStep as_step() const { return AssertionStep{widget, condition}; }
  friend bool operator==(const ConcreteAssertion&, const ConcreteAssertion&) = default;
};

/// Present holds iff some widget of `state` has the same identity.
bool holds(const ConcreteAssertion& assertion, const GuiState& state);

struct Rejected {
  std::string reason;
};

class ExecOutcome {
 public:
  static ExecOutcome ok(GuiState state) { return ExecOutcome(std::move(state)); }
  static ExecOutcome rejected(std::string reason) { return ExecOutcome(Rejected{std::move(reason)}); }

  bool is_ok() const noexcept { return std::holds_alternative<GuiState>(status_); }
  const GuiState& state() const { return std::get<GuiState>(status_); }
  const std::string& reason() const { return std::get<Rejected>(status_).reason; }

 private:
  explicit ExecOutcome(std::variant<GuiState, Rejected> status) : status_(std::move(status)) {}
  std::variant<GuiState, Rejected> status_;
};

using CoverageSet = std::set<std::string>;

/// One executed event as seen by a trace consumer.
struct TraceEvent {
  WidgetRef widget;
  ActionKind action = ActionKind::Click;
  std::optional<std::string> value;
  std::string from_state;
  std::string to_state;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

/// Observed states (starting with the reset state) and the events between them.
struct RunTrace {
  std::vector<GuiState> states;
  std::vector<TraceEvent> events;

  friend bool operator==(const RunTrace&, const RunTrace&) = default;
};

/// Driver contract. Forward-only: the only way back is `reset`.
class Device {
 public:
  virtual ~Device() = default;
  virtual GuiState reset() = 0;
  virtual GuiState observe() = 0;
  /// Rejected outcomes leave the device state untouched. Throws DriverError
  /// on transport failure only.
  virtual ExecOutcome execute(const ConcreteEvent& event) = 0;
};

/// Builds an event for `widget` observed in `state`.
ConcreteEvent make_event(const GuiState& state, const StateWidget& widget, ActionKind action,
                         std::optional<std::string> value = std::nullopt);

// Wire/JSON forms.
Json to_json(const StateWidget& widget);
StateWidget state_widget_from_json(const Json& doc, const std::string& path);
Json to_json(const GuiState& state);
GuiState gui_state_from_json(const Json& doc, const std::string& path = "state");

}  // namespace migratekit
