#include "migratekit/device.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/format.h>

#include "migratekit/errors.hpp"

namespace migratekit {

bool StateWidget::supports(ActionKind action) const {
  return std::find(supported_actions.begin(), supported_actions.end(), action) != supported_actions.end();
}

const StateWidget* GuiState::find(std::string_view widget_id) const {
  for (const auto& w : widgets) {
    if (w.widget_id == widget_id) return &w;
  }
  return nullptr;
}

const StateWidget* GuiState::find_same(const WidgetRef& ref) const {
  for (const StateWidget* w : reading_order(*this)) {
    if (same_widget(w->ref(), ref)) return w;
  }
  return nullptr;
}

std::vector<const StateWidget*> reading_order(const GuiState& state) {
  std::vector<const StateWidget*> out;
  out.reserve(state.widgets.size());
  for (const auto& w : state.widgets) out.push_back(&w);
  std::stable_sort(out.begin(), out.end(), [](const StateWidget* a, const StateWidget* b) {
    if (a->bounds.top != b->bounds.top) return a->bounds.top < b->bounds.top;
    return a->bounds.left < b->bounds.left;
  });
  return out;
}

void validate_state(const GuiState& state) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < state.widgets.size(); ++i) {
    const auto& w = state.widgets[i];
    const std::string path = fmt::format("{}.widgets[{}]", state.state_id, i);
    if (w.widget_id.empty()) throw SchemaError(path, "empty widget id");
    if (!seen.insert(w.widget_id).second) throw SchemaError(path, "duplicate widget id \"" + w.widget_id + "\"");
    if (w.ref().empty()) throw SchemaError(path, "widget has no semantic attribute");
    if (!w.bounds.well_ordered()) throw SchemaError(path + ".bounds", "bounds are not well ordered");
  }
}

bool holds(const ConcreteAssertion& assertion, const GuiState& state) {
  const bool present = state.find_same(assertion.widget) != nullptr;
  return assertion.condition == ConditionKind::Present ? present : !present;
}

ConcreteEvent make_event(const GuiState& state, const StateWidget& widget, ActionKind action,
                         std::optional<std::string> value) {
  return ConcreteEvent{widget.widget_id, state.state_id, widget.ref(), action, std::move(value)};
}

Json to_json(const StateWidget& widget) {
  Json out = Json::object();
  out["widget_id"] = widget.widget_id;
  if (widget.text) out["text"] = *widget.text;
  if (widget.content_desc) out["content_desc"] = *widget.content_desc;
  if (widget.resource_id) out["resource_id"] = *widget.resource_id;
  out["bounds"] = {widget.bounds.left, widget.bounds.top, widget.bounds.right, widget.bounds.bottom};
  out["supported_actions"] = Json::array();
  for (auto a : widget.supported_actions) out["supported_actions"].push_back(action_token(a));
  return out;
}

StateWidget state_widget_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object()) throw SchemaError(path, "expected an object");
  StateWidget w;
  auto id = doc.find("widget_id");
  if (id == doc.end() || !id->is_string()) throw SchemaError(path + ".widget_id", "expected a string");
  w.widget_id = id->get<std::string>();
  auto opt = [&](const char* key) -> std::optional<std::string> {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw SchemaError(path + "." + key, "expected a string");
    std::string v = trim(it->get<std::string>());
    if (v.empty()) return std::nullopt;
    return v;
  };
  w.text = opt("text");
  w.content_desc = opt("content_desc");
  w.resource_id = opt("resource_id");
  auto bounds = doc.find("bounds");
  if (bounds != doc.end()) {
    if (!bounds->is_array() || bounds->size() != 4) throw SchemaError(path + ".bounds", "expected [l, t, r, b]");
    for (const auto& b : *bounds) {
      if (!b.is_number_integer()) throw SchemaError(path + ".bounds", "expected integers");
    }
    w.bounds = {(*bounds)[0].get<int>(), (*bounds)[1].get<int>(), (*bounds)[2].get<int>(), (*bounds)[3].get<int>()};
  }
  auto actions = doc.find("supported_actions");
  if (actions != doc.end()) {
    if (!actions->is_array()) throw SchemaError(path + ".supported_actions", "expected an array");
    for (const auto& a : *actions) {
      auto kind = a.is_string() ? parse_action(a.get<std::string>()) : std::nullopt;
      if (!kind) throw SchemaError(path + ".supported_actions", "unknown action " + a.dump());
      w.supported_actions.push_back(*kind);
    }
    std::sort(w.supported_actions.begin(), w.supported_actions.end());
    w.supported_actions.erase(std::unique(w.supported_actions.begin(), w.supported_actions.end()),
                              w.supported_actions.end());
  }
  return w;
}

Json to_json(const GuiState& state) {
  Json out = Json::object();
  out["state_id"] = state.state_id;
  out["widgets"] = Json::array();
  for (const auto& w : state.widgets) out["widgets"].push_back(to_json(w));
  return out;
}

GuiState gui_state_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object()) throw SchemaError(path, "expected an object");
  GuiState state;
  auto id = doc.find("state_id");
  if (id == doc.end() || !id->is_string()) throw SchemaError(path + ".state_id", "expected a string");
  state.state_id = id->get<std::string>();
  auto widgets = doc.find("widgets");
  if (widgets == doc.end() || !widgets->is_array()) throw SchemaError(path + ".widgets", "expected an array");
  for (std::size_t i = 0; i < widgets->size(); ++i)
    state.widgets.push_back(state_widget_from_json((*widgets)[i], fmt::format("{}.widgets[{}]", path, i)));
  validate_state(state);
  return state;
}

}  // namespace migratekit
