#include "migratekit/sim_device.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "migratekit/errors.hpp"

namespace migratekit {

std::string substitute(std::string_view text, const VariableStore& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '$' && i + 1 < text.size() && text[i + 1] == '{') {
      const auto close = text.find('}', i + 2);
      if (close != std::string_view::npos) {
        const std::string name(text.substr(i + 2, close - i - 2));
        if (auto it = vars.find(name); it != vars.end()) out += it->second;
        i = close + 1;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

namespace sim {

std::string TransitionKey::str() const {
  return fmt::format("{}/{}/{}", state_id, widget_id, action_token(action));
}

bool WidgetMatch::matches(const WidgetRef& widget, const VariableStore& vars) const {
  auto field = [&](const std::optional<std::string>& want, const std::optional<std::string>& have) {
    if (!want) return true;
    return have && *have == substitute(*want, vars);
  };
  return field(text, widget.text) && field(content_desc, widget.content_desc) &&
         field(resource_id, widget.resource_id);
}

}  // namespace sim

namespace {

using namespace sim;

const Json& require(const Json& doc, const char* key, const std::string& path) {
  auto it = doc.find(key);
  if (it == doc.end()) throw SchemaError(path + "." + key, "missing field");
  return *it;
}

std::string require_string(const Json& doc, const char* key, const std::string& path) {
  const Json& v = require(doc, key, path);
  if (!v.is_string()) throw SchemaError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

WidgetMatch match_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object()) throw SchemaError(path, "expected an object");
  WidgetMatch m;
  for (auto [key, field] : {std::pair{"text", &m.text}, std::pair{"content_desc", &m.content_desc},
                            std::pair{"resource_id", &m.resource_id}}) {
    if (auto it = doc.find(key); it != doc.end()) {
      if (!it->is_string()) throw SchemaError(path + "." + key, "expected a string");
      *field = it->get<std::string>();
    }
  }
  if (!m.text && !m.content_desc && !m.resource_id) throw SchemaError(path, "widget match names no attribute");
  return m;
}

ActionKind action_from_json(const Json& doc, const char* key, const std::string& path) {
  const std::string token = require_string(doc, key, path);
  auto action = parse_action(token);
  if (!action) throw SchemaError(path + "." + key, "unknown action \"" + token + "\"");
  return *action;
}

Effect effect_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object() || doc.size() != 1) throw SchemaError(path, "effect must be an object with one key");
  const auto& [kind, body] = *doc.items().begin();
  if (kind == "goto") {
    if (!body.is_string()) throw SchemaError(path + ".goto", "expected a state id");
    return Goto{body.get<std::string>()};
  }
  if (kind == "set_var") {
    const std::string p = path + ".set_var";
    if (!body.is_object()) throw SchemaError(p, "expected an object");
    SetVar s{require_string(body, "name", p), std::nullopt};
    const bool from_input = body.value("from_input", false);
    if (auto lit = body.find("literal"); lit != body.end()) {
      if (!lit->is_string()) throw SchemaError(p + ".literal", "expected a string");
      s.literal = lit->get<std::string>();
    }
    if (from_input == s.literal.has_value()) throw SchemaError(p, "set exactly one of from_input or literal");
    return s;
  }
  if (kind == "add_widget") {
    const std::string p = path + ".add_widget";
    if (!body.is_object()) throw SchemaError(p, "expected an object");
    return AddWidget{require_string(body, "state", p), state_widget_from_json(require(body, "widget", p), p + ".widget")};
  }
  if (kind == "remove_widget") {
    const std::string p = path + ".remove_widget";
    if (!body.is_object()) throw SchemaError(p, "expected an object");
    return RemoveWidget{require_string(body, "state", p), require_string(body, "widget_id", p)};
  }
  if (kind == "noop") return NoOp{};
  throw SchemaError(path, "unknown effect \"" + kind + "\"");
}

OracleAtom atom_from_json(const Json& doc, const std::string& path) {
  if (!doc.is_object() || doc.size() != 1) throw SchemaError(path, "oracle atom must be an object with one key");
  const auto& [kind, body] = *doc.items().begin();
  const std::string p = path + "." + kind;
  if (kind == "event_occurred") {
    if (!body.is_object()) throw SchemaError(p, "expected an object");
    return EventOccurred{match_from_json(require(body, "widget", p), p + ".widget"), action_from_json(body, "action", p)};
  }
  if (kind == "var_equals") {
    if (!body.is_object()) throw SchemaError(p, "expected an object");
    return VarEquals{require_string(body, "name", p), require_string(body, "value", p)};
  }
  if (kind == "widget_absent_in_final") return WidgetAbsentInFinal{match_from_json(body, p)};
  if (kind == "widget_present_at_some_state") return WidgetPresentAtSomeState{match_from_json(body, p)};
  throw SchemaError(path, "unknown oracle atom \"" + kind + "\"");
}

}  // namespace

SimAppSpec load_sim_app(std::string_view document) {
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw SchemaError("", std::string("malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("", "sim app must be an object");

  SimAppSpec spec;
  spec.app_id = require_string(doc, "app_id", "");
  spec.category = require_string(doc, "category", "");
  spec.initial_state_id = require_string(doc, "initial_state", "");

  const Json& states = require(doc, "states", "");
  if (!states.is_object() || states.empty()) throw SchemaError("states", "expected a non-empty object");
  for (const auto& [state_id, widgets] : states.items()) {
    const std::string path = "states." + state_id;
    if (!widgets.is_array()) throw SchemaError(path, "expected an array of widgets");
    GuiState state{state_id, {}};
    for (std::size_t i = 0; i < widgets.size(); ++i)
      state.widgets.push_back(state_widget_from_json(widgets[i], fmt::format("{}[{}]", path, i)));
    validate_state(state);
    spec.states.emplace(state_id, std::move(state.widgets));
  }
  if (!spec.states.contains(spec.initial_state_id))
    throw SchemaError("initial_state", "unknown state \"" + spec.initial_state_id + "\"");

  auto require_state = [&](const std::string& id, const std::string& path) {
    if (!spec.states.contains(id)) throw SchemaError(path, "unknown state \"" + id + "\"");
  };

  std::vector<std::pair<TransitionKey, std::string>> pending;
  if (auto it = doc.find("transitions"); it != doc.end()) {
    if (!it->is_array()) throw SchemaError("transitions", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const Json& t = (*it)[i];
      const std::string path = fmt::format("transitions[{}]", i);
      if (!t.is_object()) throw SchemaError(path, "expected an object");
      TransitionKey key{require_string(t, "state", path), require_string(t, "widget_id", path),
                        action_from_json(t, "action", path)};
      require_state(key.state_id, path + ".state");
      std::vector<Effect> effects;
      if (auto e = t.find("effects"); e != t.end()) {
        if (!e->is_array()) throw SchemaError(path + ".effects", "expected an array");
        for (std::size_t j = 0; j < e->size(); ++j)
          effects.push_back(effect_from_json((*e)[j], fmt::format("{}.effects[{}]", path, j)));
      }
      for (std::size_t j = 0; j < effects.size(); ++j) {
        const std::string ep = fmt::format("{}.effects[{}]", path, j);
        if (const auto* g = std::get_if<Goto>(&effects[j])) require_state(g->state_id, ep + ".goto");
        if (const auto* a = std::get_if<AddWidget>(&effects[j])) require_state(a->state_id, ep + ".add_widget.state");
        if (const auto* r = std::get_if<RemoveWidget>(&effects[j])) require_state(r->state_id, ep + ".remove_widget.state");
      }
      if (spec.transitions.contains(key)) throw SchemaError(path, "duplicate transition " + key.str());
      pending.emplace_back(key, path);
      spec.transitions.emplace(std::move(key), std::move(effects));
    }
  }

  // Widgets that can exist in a state: declared ones plus AddWidget templates.
  std::map<std::string, std::map<std::string, const StateWidget*>> reachable;
  for (const auto& [id, widgets] : spec.states) {
    for (const auto& w : widgets) reachable[id][w.widget_id] = &w;
  }
  for (const auto& [key, effects] : spec.transitions) {
    for (const auto& e : effects) {
      if (const auto* a = std::get_if<AddWidget>(&e)) reachable[a->state_id][a->widget_template.widget_id] = &a->widget_template;
    }
  }
  for (const auto& [key, path] : pending) {
    auto state = reachable.find(key.state_id);
    const StateWidget* w = nullptr;
    if (state != reachable.end()) {
      if (auto it = state->second.find(key.widget_id); it != state->second.end()) w = it->second;
    }
    if (!w) throw SchemaError(path + ".widget_id", "no widget \"" + key.widget_id + "\" in state " + key.state_id);
    if (!w->supports(key.action))
      throw SchemaError(path + ".action", "widget \"" + key.widget_id + "\" does not declare " +
                                              std::string(action_token(key.action)));
  }

  if (auto it = doc.find("oracles"); it != doc.end()) {
    if (!it->is_object()) throw SchemaError("oracles", "expected an object");
    for (const auto& [functionality, atoms] : it->items()) {
      const std::string path = "oracles." + functionality;
      if (!atoms.is_array()) throw SchemaError(path, "expected an array of atoms");
      OracleSpec oracle;
      for (std::size_t i = 0; i < atoms.size(); ++i)
        oracle.atoms.push_back(atom_from_json(atoms[i], fmt::format("{}[{}]", path, i)));
      spec.oracles.emplace(functionality, std::move(oracle));
    }
  }
  return spec;
}

SimAppSpec load_sim_app_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return load_sim_app(buf.str());
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + (e.path().empty() ? "" : ":" + e.path()), e.what());
  }
}

bool eval_oracle(const SimAppSpec& spec, const std::string& functionality, const RunTrace& trace,
                 const VariableStore& final_store) {
  auto it = spec.oracles.find(functionality);
  if (it == spec.oracles.end())
    throw UnknownFunctionality("app " + spec.app_id + " has no oracle for \"" + functionality + "\"");

  for (const auto& atom : it->second.atoms) {
    const bool ok = std::visit(
        [&](const auto& a) -> bool {
          using A = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<A, EventOccurred>) {
            return std::any_of(trace.events.begin(), trace.events.end(), [&](const TraceEvent& e) {
              return e.action == a.action && a.widget.matches(e.widget, final_store);
            });
          } else if constexpr (std::is_same_v<A, VarEquals>) {
            auto v = final_store.find(a.name);
            return v != final_store.end() && v->second == a.value;
          } else if constexpr (std::is_same_v<A, WidgetAbsentInFinal>) {
            if (trace.states.empty()) return false;
            const auto& widgets = trace.states.back().widgets;
            return std::none_of(widgets.begin(), widgets.end(),
                                [&](const StateWidget& w) { return a.widget.matches(w.ref(), final_store); });
          } else {
            return std::any_of(trace.states.begin(), trace.states.end(), [&](const GuiState& s) {
              return std::any_of(s.widgets.begin(), s.widgets.end(),
                                 [&](const StateWidget& w) { return a.widget.matches(w.ref(), final_store); });
            });
          }
        },
        atom);
    if (!ok) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// SimDevice
// ---------------------------------------------------------------------------

SimDevice::SimDevice(std::shared_ptr<const SimAppSpec> spec) : spec_(std::move(spec)) {
  if (!spec_) throw ConfigError("sim device needs a spec");
  reset();
}

GuiState SimDevice::reset() {
  current_ = spec_->initial_state_id;
  live_.clear();
  for (const auto& [id, widgets] : spec_->states) {
    auto& list = live_[id];
    for (const auto& w : widgets) list.push_back({w, w.widget_id});
  }
  vars_.clear();
  coverage_.clear();
  trace_ = RunTrace{};
  GuiState s = snapshot();
  trace_.states.push_back(s);
  return s;
}

GuiState SimDevice::snapshot() const {
  GuiState state{current_, {}};
  const auto it = live_.find(current_);
  if (it != live_.end()) {
    for (const auto& lw : it->second) state.widgets.push_back(lw.widget);
  }
  std::stable_sort(state.widgets.begin(), state.widgets.end(), [](const StateWidget& a, const StateWidget& b) {
    if (a.bounds.top != b.bounds.top) return a.bounds.top < b.bounds.top;
    return a.bounds.left < b.bounds.left;
  });
  return state;
}

GuiState SimDevice::observe() { return snapshot(); }

void SimDevice::apply(const Effect& effect, const std::optional<std::string>& input) {
  std::visit(
      [&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, Goto>) {
          current_ = e.state_id;
        } else if constexpr (std::is_same_v<E, SetVar>) {
          if (e.literal) {
            vars_[e.name] = *e.literal;
          } else if (input) {
            vars_[e.name] = *input;
          } else if (auto it = vars_.find("input"); it != vars_.end()) {
            vars_[e.name] = it->second;
          }
        } else if constexpr (std::is_same_v<E, AddWidget>) {
          StateWidget w = e.widget_template;
          w.widget_id = substitute(w.widget_id, vars_);
          for (auto* attr : {&w.text, &w.content_desc, &w.resource_id}) {
            if (!*attr) continue;
            std::string v = trim(substitute(**attr, vars_));
            if (v.empty()) attr->reset();
            else *attr = std::move(v);
          }
          auto& list = live_[e.state_id];
          const bool clash = std::any_of(list.begin(), list.end(),
                                         [&](const LiveWidget& lw) { return lw.widget.widget_id == w.widget_id; });
          if (clash) {
            spdlog::debug("sim {}: widget {} already in {}, add skipped", spec_->app_id, w.widget_id, e.state_id);
          } else if (w.widget_id.empty() || w.ref().empty()) {
            spdlog::debug("sim {}: rendered widget in {} is empty, add skipped", spec_->app_id, e.state_id);
          } else {
            list.push_back({std::move(w), e.widget_template.widget_id});
          }
        } else if constexpr (std::is_same_v<E, RemoveWidget>) {
          const std::string id = substitute(e.widget_id, vars_);
          auto& list = live_[e.state_id];
          const auto before = list.size();
          std::erase_if(list, [&](const LiveWidget& lw) { return lw.widget.widget_id == id; });
          if (list.size() == before)
            spdlog::debug("sim {}: remove of absent widget {} in {}", spec_->app_id, id, e.state_id);
        }
      },
      effect);
}

ExecOutcome SimDevice::execute(const ConcreteEvent& event) {
  auto& list = live_[current_];
  auto it = std::find_if(list.begin(), list.end(),
                         [&](const LiveWidget& lw) { return lw.widget.widget_id == event.widget_id; });
  if (it == list.end())
    return ExecOutcome::rejected(fmt::format("no widget \"{}\" in state {}", event.widget_id, current_));
  if (!it->widget.supports(event.action))
    return ExecOutcome::rejected(
        fmt::format("widget \"{}\" does not support {}", event.widget_id, action_token(event.action)));
  if (event.action == ActionKind::Edit && !event.value)
    return ExecOutcome::rejected("edit without a value");

  const TransitionKey key{current_, it->origin_id, event.action};
  auto transition = spec_->transitions.find(key);
  if (transition == spec_->transitions.end())
    return ExecOutcome::rejected(fmt::format("no transition for {} on \"{}\" in state {}",
                                             action_token(event.action), event.widget_id, current_));

  const WidgetRef widget = it->widget.ref();
  const std::string from = current_;
  if (event.action == ActionKind::Edit) vars_["input"] = *event.value;
  const std::optional<std::string> input = event.action == ActionKind::Edit ? event.value : std::nullopt;
  for (const auto& effect : transition->second) apply(effect, input);

  coverage_.insert(key.str());
  GuiState next = snapshot();
  trace_.events.push_back({widget, event.action, event.value, from, current_});
  trace_.states.push_back(next);
  return ExecOutcome::ok(std::move(next));
}

// ---------------------------------------------------------------------------
// Coverage files
// ---------------------------------------------------------------------------

CoverageSet read_coverage(std::string_view text) {
  CoverageSet out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::string id = trim(line);
    if (!id.empty()) out.insert(std::move(id));
  }
  return out;
}

CoverageSet read_coverage_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return read_coverage(buf.str());
}

std::string write_coverage(const CoverageSet& coverage) {
  std::string out;
  for (const auto& id : coverage) out += id + "\n";
  return out;
}

}  // namespace migratekit
