#include "migratekit/feedback.hpp"

#include <fmt/format.h>

namespace migratekit::feedback {

std::string quote_step(const LogicStep& step) {
  return fmt::format("\"Step {}: {}\"", step.index, render_logic_step(step));
}

std::string quote_text(std::string_view text) { return fmt::format("\"{}\"", trim(text)); }

std::string irrelevant_step() {
  return "The number of your summarized test steps is more than the maximum number of test steps, which may "
         "introduce irrelevant test steps. Please re-summarize it";
}

std::string missing_step() {
  return "The number of your summarized test steps is less than the minimum number of test steps, which may miss "
         "some necessary test steps. Please re-summarize it.";
}

std::string ambiguous_action(const std::string& quoted_step) {
  return fmt::format(
      "The {} does not include an action that appears in the output example. Please select one action in the "
      "output example to re-describe this step",
      quoted_step);
}

std::string incorrect_type(const std::string& quoted_step) {
  return fmt::format(
      "The type of {} and the corresponding events/assertions are not aligned. Please re-match this step",
      quoted_step);
}

std::string irrelevant_matching(const std::string& quoted_step) {
  return fmt::format("The {} matches new events and assertions. Please re-match this step", quoted_step);
}

std::string incorrect_format(const std::string& quoted_step) {
  return fmt::format(
      "The {} does not adhere to the required formats. Please re-generate this step with the provided format",
      quoted_step);
}

std::string completion_check(const std::string& generated, const std::string& quoted_step) {
  return fmt::format(
      "Based on {} you generated for {}, I would like to confirm if {} has been successfully completed. Please "
      "provide a response in just yes or no",
      generated, quoted_step, quoted_step);
}

}  // namespace migratekit::feedback
