#include <gtest/gtest.h>

#include <random>

#include <fmt/format.h>

#include "migratekit/errors.hpp"
#include "migratekit/evaluator.hpp"
#include "migratekit/sim_device.hpp"
#include "support/scenario.hpp"

using namespace migratekit;

namespace {

std::shared_ptr<const SimAppSpec> app(const std::string& name) {
  return std::make_shared<const SimAppSpec>(load_sim_app_file(migratekit::testing::data_path("apps/" + name + ".json")));
}

const StateWidget& widget(const GuiState& s, std::string_view id) {
  const StateWidget* w = s.find(id);
  if (!w) throw std::runtime_error(fmt::format("no widget {} in {}", id, s.state_id));
  return *w;
}

ExecOutcome run(SimDevice& d, std::string_view id, ActionKind a, std::optional<std::string> value = std::nullopt) {
  const GuiState s = d.observe();
  return d.execute(make_event(s, widget(s, id), a, std::move(value)));
}

bool shows_text(const GuiState& s, const std::string& text) {
  return std::any_of(s.widgets.begin(), s.widgets.end(), [&](const StateWidget& w) { return w.text == text; });
}

}  // namespace

TEST(GuiStateJson, SixtyOperableWidgetsRoundTrip) {
  GuiState state{"big", {}};
  for (int i = 0; i < 60; ++i) {
    StateWidget w;
    w.widget_id = fmt::format("w{}", i);
    w.text = fmt::format("Item {}", i);
    if (i % 3 == 0) w.content_desc = "desc";
    if (i % 2 == 0) w.resource_id = fmt::format("com.app:id/item_{}", i);
    w.bounds = {0, 40 * i, 1080, 40 * i + 40};
    w.supported_actions = {ActionKind::Click, ActionKind::LongPress};
    state.widgets.push_back(w);
  }
  const GuiState back = gui_state_from_json(Json::parse(to_json(state).dump()));
  EXPECT_EQ(back, state);
}

TEST(GuiStateJson, InvalidStatesAreRejected) {
  const Json dup = Json::parse(R"({"state_id":"s","widgets":[
    {"widget_id":"a","text":"A","bounds":[0,0,1,1],"supported_actions":[]},
    {"widget_id":"a","text":"B","bounds":[0,0,1,1],"supported_actions":[]}]})");
  EXPECT_THROW(gui_state_from_json(dup), SchemaError);
  const Json bad_bounds = Json::parse(
      R"({"state_id":"s","widgets":[{"widget_id":"a","text":"A","bounds":[5,0,1,1],"supported_actions":[]}]})");
  EXPECT_THROW(gui_state_from_json(bad_bounds), SchemaError);
  const Json no_attr =
      Json::parse(R"({"state_id":"s","widgets":[{"widget_id":"a","bounds":[0,0,1,1],"supported_actions":[]}]})");
  EXPECT_THROW(gui_state_from_json(no_attr), SchemaError);
}

TEST(ReadingOrder, TopThenLeft) {
  GuiState s{"s", {}};
  s.widgets.push_back({"right", "R", {}, {}, {500, 10, 600, 20}, {}});
  s.widgets.push_back({"low", "L", {}, {}, {0, 50, 10, 60}, {}});
  s.widgets.push_back({"left", "A", {}, {}, {100, 10, 200, 20}, {}});
  const auto order = reading_order(s);
  EXPECT_EQ(order[0]->widget_id, "left");
  EXPECT_EQ(order[1]->widget_id, "right");
  EXPECT_EQ(order[2]->widget_id, "low");
}

TEST(SimDevice, ResetShowsAddAndIsIdempotent) {
  SimDevice d(app("todo_alpha"));
  const GuiState s1 = d.reset();
  EXPECT_NE(s1.find("add"), nullptr);
  EXPECT_EQ(d.reset(), s1);
  EXPECT_EQ(d.observe(), s1);
  EXPECT_EQ(d.observe(), d.observe());
}

TEST(SimDevice, AddRemoveWalkAddsThenRemovesTheItem) {
  SimDevice d(app("todo_alpha"));
  d.reset();
  ASSERT_TRUE(run(d, "add", ActionKind::Click).is_ok());
  EXPECT_EQ(d.observe().state_id, "new_item");
  ASSERT_TRUE(run(d, "title", ActionKind::Edit, "sample to do").is_ok());
  EXPECT_EQ(d.variables().at("title"), "sample to do");
  const ExecOutcome s3 = run(d, "add_confirm", ActionKind::Click);
  ASSERT_TRUE(s3.is_ok());
  EXPECT_TRUE(shows_text(s3.state(), "sample to do"));
  const ExecOutcome s4 = run(d, "item_sample to do", ActionKind::Swipe);
  ASSERT_TRUE(s4.is_ok());
  EXPECT_TRUE(shows_text(s4.state(), "DELETE"));
  const ExecOutcome s5 = run(d, "delete_sample to do", ActionKind::Click);
  ASSERT_TRUE(s5.is_ok());
  EXPECT_FALSE(shows_text(s5.state(), "sample to do"));
  EXPECT_EQ(d.trace().events.size(), 5u);
  EXPECT_EQ(d.trace().states.size(), 6u);
  EXPECT_TRUE(eval_oracle(d.spec(), "Add and remove an item", d.trace(), d.variables()));
}

TEST(SimDevice, AddedWidgetCarriesEditedText) {
  SimDevice d(app("todo_alpha"));
  d.reset();
  run(d, "add", ActionKind::Click);
  run(d, "title", ActionKind::Edit, "X");
  const ExecOutcome out = run(d, "add_confirm", ActionKind::Click);
  ASSERT_TRUE(out.is_ok());
  EXPECT_TRUE(shows_text(out.state(), "X"));
}

TEST(SimDevice, RejectionsLeaveStateUntouched) {
  SimDevice d(app("todo_alpha"));
  const GuiState s1 = d.reset();
  ConcreteEvent ghost{"nope", "main", WidgetRef{"Ghost", {}, {}}, ActionKind::Click, {}};
  EXPECT_FALSE(d.execute(ghost).is_ok());
  EXPECT_FALSE(run(d, "add", ActionKind::Swipe).is_ok());  // no swipe transition
  EXPECT_FALSE(run(d, "toolbar", ActionKind::Click).is_ok());
  EXPECT_EQ(d.observe(), s1);
  EXPECT_TRUE(d.coverage().empty());
  EXPECT_TRUE(d.trace().events.empty());
}

TEST(SimDevice, EditWithoutValueIsRejected) {
  SimDevice d(app("todo_alpha"));
  d.reset();
  run(d, "add", ActionKind::Click);
  EXPECT_FALSE(run(d, "title", ActionKind::Edit).is_ok());
}

TEST(SimDevice, ReplayIsDeterministic) {
  const auto spec = app("todo_beta");
  const TestCase truth = parse_test_case(migratekit::testing::read_file(migratekit::testing::data_path("cases/beta_add_remove.truth.json")));
  SimDevice a(spec), b(spec);
  const ExecutionReport ra = run_test(truth, a);
  const ExecutionReport rb = run_test(truth, b);
  EXPECT_TRUE(ra.fully_executed);
  EXPECT_EQ(ra.trace, rb.trace);
  EXPECT_EQ(a.observe(), b.observe());
  EXPECT_EQ(ra.coverage, rb.coverage);
}

TEST(SimDevice, CoverageGrowsAndResets) {
  SimDevice d(app("todo_alpha"));
  d.reset();
  run(d, "add", ActionKind::Click);
  run(d, "back", ActionKind::Click);
  run(d, "add", ActionKind::Click);
  EXPECT_EQ(d.coverage(), (CoverageSet{"main/add/click", "new_item/back/click"}));
  d.reset();
  EXPECT_TRUE(d.coverage().empty());
}

TEST(Coverage, FileRoundTrip) {
  const CoverageSet c{"a/b/click", "s/w/long-press"};
  EXPECT_EQ(read_coverage(write_coverage(c)), c);
  EXPECT_EQ(read_coverage("\n  x/y/click \n\n"), CoverageSet{"x/y/click"});
}

TEST(LoadSimApp, BundledAppsCarryOracles) {
  EXPECT_TRUE(app("todo_alpha")->oracles.contains("Add and remove an item"));
  for (const char* name : {"todo_beta", "todo_gamma", "todo_delta"}) EXPECT_NO_THROW(app(name)) << name;
}

TEST(LoadSimApp, GotoUnknownStateIsSchemaError) {
  const char* doc = R"({"app_id":"x","category":"c","initial_state":"a",
    "states":{"a":[{"widget_id":"b","text":"B","bounds":[0,0,1,1],"supported_actions":["click"]}]},
    "transitions":[{"state":"a","widget_id":"b","action":"click","effects":[{"goto":"nowhere"}]}]})";
  EXPECT_THROW(load_sim_app(doc), SchemaError);
}

TEST(LoadSimApp, MinimalOneStateApp) {
  const char* doc = R"({"app_id":"x","category":"c","initial_state":"a",
    "states":{"a":[{"widget_id":"b","text":"B","bounds":[0,0,1,1],"supported_actions":[]}]}})";
  const SimAppSpec spec = load_sim_app(doc);
  EXPECT_TRUE(spec.transitions.empty());
  SimDevice d(std::make_shared<const SimAppSpec>(spec));
  EXPECT_EQ(d.reset().widgets.size(), 1u);
}

TEST(LoadSimApp, UndeclaredActionIsSchemaError) {
  const char* doc = R"({"app_id":"x","category":"c","initial_state":"a",
    "states":{"a":[{"widget_id":"b","text":"B","bounds":[0,0,1,1],"supported_actions":["click"]}]},
    "transitions":[{"state":"a","widget_id":"b","action":"swipe","effects":[]}]})";
  EXPECT_THROW(load_sim_app(doc), SchemaError);
}

TEST(Oracle, MissingDeleteIsFalseEmptyTraceIsFalse) {
  SimDevice d(app("todo_alpha"));
  d.reset();
  EXPECT_FALSE(eval_oracle(d.spec(), "Add and remove an item", d.trace(), d.variables()));
  run(d, "add", ActionKind::Click);
  run(d, "title", ActionKind::Edit, "sample to do");
  run(d, "add_confirm", ActionKind::Click);
  run(d, "item_sample to do", ActionKind::Swipe);
  EXPECT_FALSE(eval_oracle(d.spec(), "Add and remove an item", d.trace(), d.variables()));
  EXPECT_TRUE(eval_oracle(d.spec(), "Add an item", d.trace(), d.variables()));
  EXPECT_THROW(eval_oracle(d.spec(), "Share an item", d.trace(), d.variables()), UnknownFunctionality);
}

TEST(Substitute, KnownAndUnknownNames) {
  EXPECT_EQ(substitute("item_${title}", {{"title", "milk"}}), "item_milk");
  EXPECT_EQ(substitute("${missing}!", {}), "!");
  EXPECT_EQ(substitute("no vars", {}), "no vars");
}

TEST(RandomApps, WalksNeverCrashAndRejectionsAreInert) {
  for (std::uint32_t seed = 1; seed <= 50; ++seed) {
    std::mt19937 rng(seed);
    SimDevice d(std::make_shared<const SimAppSpec>(load_sim_app(migratekit::testing::random_app_document(rng, "r").dump())));
    GuiState state = d.reset();
    for (int i = 0; i < 30; ++i) {
      if (state.widgets.empty()) break;
      const StateWidget& w = state.widgets[rng() % state.widgets.size()];
      const ActionKind a = static_cast<ActionKind>(rng() % 5);
      const ExecOutcome out = d.execute(make_event(state, w, a, a == ActionKind::Edit ? std::optional<std::string>("v") : std::nullopt));
      if (out.is_ok()) {
        state = out.state();
      } else {
        EXPECT_EQ(d.observe(), state);
      }
    }
  }
}
