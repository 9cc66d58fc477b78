#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "migratekit/device.hpp"
#include "migratekit/llm_gateway.hpp"
#include "migratekit/sim_device.hpp"

namespace migratekit {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSummarization = 3;
inline constexpr int kExitDriver = 4;
inline constexpr int kExitTransport = 5;

/// "http", "scripted:<path>" or "replay:<path>".
LlmConfig parse_llm_selector(std::string_view selector);

/// "sim:<spec file>" or "wire:<host:port | stdio:command>". Each call to
/// `open()` yields an independent device.
struct DeviceSelector {
  std::string text;
  std::shared_ptr<const SimAppSpec> sim;  // null for wire devices
  std::string wire_address;

  std::unique_ptr<Device> open() const;
  std::string app_id() const;
};
DeviceSelector parse_device_selector(std::string_view selector, const std::filesystem::path& base_dir = {});

/// Runs the command line; returns the process exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace migratekit
