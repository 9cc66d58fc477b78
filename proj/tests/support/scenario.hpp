#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "migratekit/concretizer.hpp"
#include "migratekit/llm_gateway.hpp"
#include "migratekit/sim_device.hpp"
#include "migratekit/test_ir.hpp"

namespace migratekit::testing {

std::filesystem::path data_path(const std::string& relative);
std::string read_file(const std::filesystem::path& path);
/// The built migratekit executable.
std::filesystem::path cli_path();

/// Random sim app, a general logic derived from a walk through it (with some
/// steps perturbed so they cannot be carried out) and a noisy privileged set.
struct Scenario {
  std::uint32_t seed = 0;
  std::shared_ptr<const SimAppSpec> app;
  TestLogic general;
  PrivilegedSet privileged;
};

Json random_app_document(std::mt19937& rng, const std::string& app_id);
Scenario make_scenario(std::uint32_t seed);

/// Test LLM that reads the prompt it is given (step, candidates, widget
/// lists) and answers with a seeded mix of sensible, wrong, malformed and
/// negative replies.
class PromptParsingBackend : public LlmBackend {
 public:
  explicit PromptParsingBackend(std::uint32_t seed) : rng_(seed) {}
  Completion complete(const ChatRequest& request) override;

 private:
  std::string answer(const std::string& prompt, bool follow_up);
  std::mutex mutex_;
  std::mt19937 rng_;
};

/// Brute-force audit of a migration: replay from reset, priority of
/// matching over completion, single consumption of privileged items.
/// Returns one message per violation.
std::vector<std::string> audit_migration(const ConcretizeResult& result, const PrivilegedSet& offered,
                                         const std::shared_ptr<const SimAppSpec>& app, std::size_t step_count);

/// A LogicStep with random widget phrase, actions, value and condition.
LogicStep random_logic_step(std::mt19937& rng, std::size_t index);

}  // namespace migratekit::testing
