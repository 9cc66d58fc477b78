#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include "migratekit/device.hpp"

namespace migratekit {

using VariableStore = std::map<std::string, std::string>;

/// Replaces every `${name}` with its value from `vars` (unknown names become
/// empty).
std::string substitute(std::string_view text, const VariableStore& vars);

namespace sim {

struct Goto {
  std::string state_id;
};
/// Sets `name` to the last edited value (`from_input`) or to `literal`.
struct SetVar {
  std::string name;
  std::optional<std::string> literal;
};
/// Adds a widget rendered from a template whose fields may contain ${var}.
struct AddWidget {
  std::string state_id;
  StateWidget widget_template;
};
struct RemoveWidget {
  std::string state_id;
  std::string widget_id;  // may contain ${var}
};
struct NoOp {};

using Effect = std::variant<Goto, SetVar, AddWidget, RemoveWidget, NoOp>;

/// Partial widget description; every given attribute must match.
struct WidgetMatch {
  std::optional<std::string> text;
  std::optional<std::string> content_desc;
  std::optional<std::string> resource_id;

  bool matches(const WidgetRef& widget, const VariableStore& vars) const;
};

struct EventOccurred {
  WidgetMatch widget;
  ActionKind action;
};
struct VarEquals {
  std::string name;
  std::string value;
};
struct WidgetAbsentInFinal {
  WidgetMatch widget;
};
struct WidgetPresentAtSomeState {
  WidgetMatch widget;
};

using OracleAtom = std::variant<EventOccurred, VarEquals, WidgetAbsentInFinal, WidgetPresentAtSomeState>;

/// Conjunction of atoms.
struct OracleSpec {
  std::vector<OracleAtom> atoms;
};

struct TransitionKey {
  std::string state_id;
  std::string widget_id;
  ActionKind action;

  auto operator<=>(const TransitionKey&) const = default;
  /// "state/widget/action", the coverage unit id.
  std::string str() const;
};

}  // namespace sim

/// Declarative app model driving the simulator.
struct SimAppSpec {
  std::string app_id;
  std::string category;
  std::string initial_state_id;
  std::map<std::string, std::vector<StateWidget>> states;
  std::map<sim::TransitionKey, std::vector<sim::Effect>> transitions;
  std::map<std::string, sim::OracleSpec> oracles;
};

/// Parses and validates a sim-app document. Throws SchemaError with the
/// offending path.
SimAppSpec load_sim_app(std::string_view document);
SimAppSpec load_sim_app_file(const std::filesystem::path& path);

/// Evaluates the functionality oracle on a finished run. Throws
/// UnknownFunctionality.
bool eval_oracle(const SimAppSpec& spec, const std::string& functionality, const RunTrace& trace,
                 const VariableStore& final_store);

/// Deterministic device backed by a SimAppSpec. Every fired transition is
/// recorded in the coverage set, which only grows until `reset`.
class SimDevice : public Device {
 public:
  explicit SimDevice(std::shared_ptr<const SimAppSpec> spec);

  GuiState reset() override;
  GuiState observe() override;
  ExecOutcome execute(const ConcreteEvent& event) override;

  const SimAppSpec& spec() const noexcept { return *spec_; }
  const RunTrace& trace() const noexcept { return trace_; }
  const VariableStore& variables() const noexcept { return vars_; }
  const CoverageSet& coverage() const noexcept { return coverage_; }

 private:
  struct LiveWidget {
    StateWidget widget;
    std::string origin_id;  // template id used for transition lookup
  };

  GuiState snapshot() const;
  void apply(const sim::Effect& effect, const std::optional<std::string>& input);

  std::shared_ptr<const SimAppSpec> spec_;
  std::string current_;
  std::map<std::string, std::vector<LiveWidget>> live_;
  VariableStore vars_;
  RunTrace trace_;
  CoverageSet coverage_;
};

// Coverage files: one unit id per line.
CoverageSet read_coverage(std::string_view text);
CoverageSet read_coverage_file(const std::filesystem::path& path);
std::string write_coverage(const CoverageSet& coverage);

}  // namespace migratekit
