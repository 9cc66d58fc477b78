#include "migratekit/cli.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "migratekit/abstractor.hpp"
#include "migratekit/concretizer.hpp"
#include "migratekit/errors.hpp"
#include "migratekit/evaluator.hpp"
#include "migratekit/wire_device.hpp"

namespace migratekit {

namespace fs = std::filesystem;

LlmConfig parse_llm_selector(std::string_view selector) {
  LlmConfig config;
  auto with_path = [&](std::string_view prefix) -> std::optional<fs::path> {
    if (selector.substr(0, prefix.size()) != prefix) return std::nullopt;
    std::string rest(selector.substr(prefix.size()));
    if (rest.empty()) throw ConfigError(fmt::format("--llm {} needs a path", prefix));
    return fs::path(rest);
  };
  if (selector == "http") {
    config.backend = HttpBackendSpec{};
  } else if (auto p = with_path("scripted:")) {
    config.backend = ScriptedBackendSpec{*p};
  } else if (auto r = with_path("replay:")) {
    config.backend = ReplayBackendSpec{*r};
  } else {
    throw ConfigError("--llm must be http, scripted:<path> or replay:<path>");
  }
  return config;
}

std::unique_ptr<Device> DeviceSelector::open() const {
  if (sim) return std::make_unique<SimDevice>(sim);
  return connect_wire_device(wire_address);
}

std::string DeviceSelector::app_id() const { return sim ? sim->app_id : std::string(); }

DeviceSelector parse_device_selector(std::string_view selector, const fs::path& base_dir) {
  DeviceSelector out;
  out.text = std::string(selector);
  if (selector.substr(0, 4) == "sim:") {
    fs::path spec_path(std::string(selector.substr(4)));
    if (spec_path.is_relative() && !base_dir.empty()) spec_path = base_dir / spec_path;
    out.sim = std::make_shared<const SimAppSpec>(load_sim_app_file(spec_path));
    return out;
  }
  if (selector.substr(0, 5) == "wire:") {
    out.wire_address = std::string(selector.substr(5));
    if (out.wire_address.empty()) throw ConfigError("wire: needs an address");
    return out;
  }
  throw ConfigError("--device must be sim:<spec> or wire:<address>");
}

namespace {

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

std::string pretty(const Json& doc) { return doc.dump(2) + "\n"; }

TestCase load_case(const fs::path& path) {
  try {
    return parse_test_case(read_text(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string(), e.what());
  }
}

TestLogic load_logic(const fs::path& path) {
  try {
    return read_logic_file(read_text(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string(), e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared options
// ---------------------------------------------------------------------------

struct LlmOptions {
  std::string selector = "http";
  std::string endpoint;
  std::string model;
  double temperature = 0.4;
  std::string record;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--llm", selector, "http | scripted:<path> | replay:<path>")->capture_default_str();
    cmd.add_option("--endpoint", endpoint, "base URL of an OpenAI-compatible API");
    cmd.add_option("--model", model, "model name sent to the API");
    cmd.add_option("--temperature", temperature, "sampling temperature")->capture_default_str();
    cmd.add_option("--record", record, "write every LLM exchange to this transcript");
  }
};

struct LlmStack {
  std::unique_ptr<LlmGateway> gateway;
};

LlmStack open_llm(const LlmOptions& opts) {
  LlmConfig config = parse_llm_selector(opts.selector);
  if (auto* http = std::get_if<HttpBackendSpec>(&config.backend)) {
    if (!opts.endpoint.empty()) http->endpoint = opts.endpoint;
    if (!opts.model.empty()) http->model_name = opts.model;
  }
  config.temperature = opts.temperature;
  config.validate();
  std::shared_ptr<LlmBackend> backend = make_backend(config);
  if (!opts.record.empty()) backend = std::make_shared<RecordingBackend>(backend, fs::path(opts.record));
  return {std::make_unique<LlmGateway>(config, backend)};
}

Json usage_json(const TokenUsage& usage) {
  return {{"prompt_tokens", usage.prompt_tokens},
          {"completion_tokens", usage.completion_tokens},
          {"total_tokens", usage.total()},
          {"requests", usage.requests}};
}

Json violations_json(const std::vector<TlViolation>& violations) {
  Json out = Json::array();
  for (const auto& v : violations) {
    out.push_back({{"rule", rule_name(v.rule)},
                   {"step", v.offending_step_index ? Json(*v.offending_step_index) : Json(nullptr)},
                   {"feedback", v.feedback_text}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_extract(const std::vector<std::string>& files, const fs::path& out) {
  for (const auto& file : files) {
    const TestCase tc = load_case(file);
    const fs::path target = out / (fs::path(file).stem().string() + ".logic");
    write_text(target, write_logic_file(extract_logic(tc)));
    std::cout << target.string() << "\n";
  }
  return kExitOk;
}

/// Summarizes `logics` and persists general.logic and summary.json in `out`.
TestLogic abstract_into(const std::vector<TestLogic>& logics, std::string functionality, std::string category,
                        const AbstractorConfig& config, LlmSession& session, const fs::path& out) {
  if (logics.empty()) throw EmptyInput("no individual test logic given");
  if (functionality.empty()) functionality = logics.front().functionality;
  if (category.empty()) category = logics.front().category;
  try {
    SummaryResult result = summarize(logics, functionality, category, config, session);
    Json summary = Json::object();
    summary["functionality"] = functionality;
    summary["category"] = category;
    summary["rounds"] = result.rounds;
    summary["format_reasks"] = result.format_reasks;
    summary["rejected_rounds"] = Json::array();
    for (const auto& round : result.rejected_rounds) summary["rejected_rounds"].push_back(violations_json(round));
    summary["token_usage"] = usage_json(session.usage());
    write_text(out / "general.logic", write_logic_file(result.logic));
    write_text(out / "summary.json", pretty(summary));
    return result.logic;
  } catch (const SummarizationFailed& e) {
    write_text(out / "violations.json", pretty(Json{{"violations", violations_json(e.violations())}}));
    throw;
  }
}

int cmd_abstract(const std::vector<std::string>& files, const std::string& functionality, const std::string& category,
                 const AbstractorConfig& config, const LlmOptions& llm, const fs::path& out) {
  std::vector<TestLogic> logics;
  for (const auto& f : files) logics.push_back(load_logic(f));
  LlmStack stack = open_llm(llm);
  LlmSession session(*stack.gateway);
  abstract_into(logics, functionality, category, config, session, out);
  std::cout << (out / "general.logic").string() << "\n";
  return kExitOk;
}

struct MigrateOptions {
  std::string logic;
  std::vector<std::string> cases;
  std::string functionality;
  std::string category;
  std::string device;
  std::string privileged;
  std::string source_case;
  std::string ground_truth;
  std::string target_app;
};

int cmd_migrate(const MigrateOptions& opts, const AbstractorConfig& abs_config, const ConcretizerConfig& cnc_config,
                const LlmOptions& llm, unsigned seed, const fs::path& out) {
  if (opts.logic.empty() == opts.cases.empty()) throw ConfigError("give exactly one of --logic or --cases");
  const DeviceSelector selector = parse_device_selector(opts.device);
  const std::string target_app = opts.target_app.empty() ? selector.app_id() : opts.target_app;
  if (target_app.empty()) throw ConfigError("--target-app is required for wire devices");

  LlmStack stack = open_llm(llm);
  LlmSession session(*stack.gateway);

  std::vector<TestCase> sources;
  TestLogic general;
  if (!opts.cases.empty()) {
    std::vector<TestLogic> logics;
    for (const auto& file : opts.cases) {
      sources.push_back(load_case(file));
      logics.push_back(extract_logic(sources.back()));
      write_text(out / "logic" / (fs::path(file).stem().string() + ".logic"), write_logic_file(logics.back()));
    }
    general = abstract_into(logics, opts.functionality, opts.category, abs_config, session, out);
  } else {
    general = load_logic(opts.logic);
    if (!opts.functionality.empty()) general.functionality = opts.functionality;
    if (!opts.category.empty()) general.category = opts.category;
    write_text(out / "general.logic", write_logic_file(general));
  }
  if (!opts.source_case.empty()) sources.insert(sources.begin(), load_case(opts.source_case));

  std::unique_ptr<Device> device = selector.open();
  PrivilegedSet privileged;
  if (!opts.privileged.empty()) {
    privileged = load_privileged_file(opts.privileged);
  } else if (!sources.empty()) {
    privileged = lexical_privileged_set(sources.front(), *device, LexicalMapperConfig{0.1, seed});
  } else {
    spdlog::warn("no privileged file and no source case; every step goes through completion");
    privileged.source_tool = "none";
  }
  write_text(out / "privileged.json", pretty(to_json(privileged)));

  ConcretizeResult result;
  try {
    result = concretize(general, privileged, *device, session, cnc_config, target_app);
  } catch (const MigrationAborted& e) {
    write_text(out / "migrated.partial.json", pretty(to_json(e.partial().test_case)));
    write_text(out / "trace.json", pretty(e.partial().trace.to_json()));
    throw;
  }
  write_text(out / "migrated.json", pretty(to_json(result.test_case)));
  write_text(out / "trace.json", pretty(result.trace.to_json()));

  std::optional<TestCase> truth;
  if (!opts.ground_truth.empty()) truth = load_case(opts.ground_truth);
  std::unique_ptr<Device> replay_device = selector.open();
  CaseRecord record = evaluate_case(general.functionality, result.test_case, truth ? &*truth : nullptr, *replay_device,
                                    selector.sim.get());
  record.token_usage = session.usage();
  record.decisions = {{"matched", result.trace.count(Route::Matched)},
                      {"completion", result.trace.count(Route::Completion)},
                      {"skipped", result.trace.skipped()}};
  RunReport report = aggregate_run({std::move(record)});
  write_text(out / "report.json", pretty(report.to_json()));
  write_text(out / "summary.txt", report.summary_table());
  std::cout << report.summary_table();
  return kExitOk;
}

struct EvalEntry {
  std::string id;
  fs::path migrated;
  std::optional<fs::path> ground_truth;
  std::optional<fs::path> trace;
  DeviceSelector device;
};

std::vector<EvalEntry> load_suite(const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  Json doc;
  try {
    doc = Json::parse(read_text(manifest));
  } catch (const Json::parse_error& e) {
    throw SchemaError(manifest.string(), e.what());
  }
  if (!doc.is_object() || !doc.contains("cases") || !doc["cases"].is_array())
    throw SchemaError(manifest.string() + ": cases", "expected an array");
  auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };
  std::vector<EvalEntry> out;
  for (std::size_t i = 0; i < doc["cases"].size(); ++i) {
    const Json& c = doc["cases"][i];
    const std::string path = fmt::format("{}: cases[{}]", manifest.string(), i);
    if (!c.is_object()) throw SchemaError(path, "expected an object");
    for (const char* key : {"id", "migrated", "device"}) {
      if (!c.contains(key) || !c[key].is_string()) throw SchemaError(path + "." + key, "expected a string");
    }
    EvalEntry entry{c["id"].get<std::string>(), resolve(c["migrated"].get<std::string>()), std::nullopt,
                    std::nullopt, parse_device_selector(c["device"].get<std::string>(), base)};
    if (c.contains("ground_truth")) entry.ground_truth = resolve(c["ground_truth"].get<std::string>());
    if (c.contains("trace")) entry.trace = resolve(c["trace"].get<std::string>());
    out.push_back(std::move(entry));
  }
  return out;
}

CaseRecord evaluate_entry(const EvalEntry& entry) {
  const TestCase migrated = load_case(entry.migrated);
  std::optional<TestCase> truth;
  if (entry.ground_truth) truth = load_case(*entry.ground_truth);
  std::unique_ptr<Device> device = entry.device.open();
  CaseRecord record = evaluate_case(entry.id, migrated, truth ? &*truth : nullptr, *device, entry.device.sim.get());
  if (entry.trace) {
    const Json trace = Json::parse(read_text(*entry.trace));
    if (auto u = trace.find("token_usage"); u != trace.end()) {
      record.token_usage.prompt_tokens = u->value("prompt_tokens", 0);
      record.token_usage.completion_tokens = u->value("completion_tokens", 0);
      record.token_usage.requests = u->value("requests", 0);
    }
    record.decisions = {{"matched", trace.value("matched_steps", 0)},
                        {"completion", trace.value("completion_steps", 0)},
                        {"skipped", trace.value("skipped_steps", 0)}};
  }
  return record;
}

int cmd_eval(const std::string& suite, const std::string& single_case, const std::string& ground_truth,
             const std::string& device, int jobs, bool timing, const fs::path& out) {
  std::vector<EvalEntry> entries;
  if (!suite.empty()) {
    entries = load_suite(suite);
  } else if (!single_case.empty()) {
    if (device.empty()) throw ConfigError("--case needs --device");
    EvalEntry e{fs::path(single_case).stem().string(), single_case, std::nullopt, std::nullopt,
                parse_device_selector(device)};
    if (!ground_truth.empty()) e.ground_truth = fs::path(ground_truth);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw EmptySuite("no test cases to evaluate");

  std::vector<CaseRecord> records(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < entries.size();) {
      try {
        records[i] = evaluate_entry(entries[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, entries.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (const auto& r : records) {
    if (!r.execution.coverage.empty()) write_text(out / "coverage" / (r.case_id + ".txt"), write_coverage(r.execution.coverage));
  }
  RunReport report = aggregate_run(std::move(records));
  write_text(out / "report.json", pretty(report.to_json(timing)));
  write_text(out / "summary.txt", report.summary_table());
  std::cout << report.summary_table();
  return kExitOk;
}

int cmd_coverage(const std::vector<std::string>& generated, const std::string& ground_truth) {
  CoverageSet gen;
  for (const auto& f : generated) {
    CoverageSet part = read_coverage_file(f);
    gen.insert(part.begin(), part.end());
  }
  const CoverageSet truth = read_coverage_file(ground_truth);
  const double ratio = coverage_capability(gen, truth);
  std::size_t common = 0;
  for (const auto& unit : truth) common += gen.count(unit);
  std::cout << fmt::format("coverage-capability {:.3f} ({}/{})\n", ratio, common, truth.size());
  return kExitOk;
}

int cmd_serve_sim(const std::string& app, bool use_stdio, int port, bool once) {
  auto spec = std::make_shared<const SimAppSpec>(load_sim_app_file(app));
  SimDevice device(spec);
  if (use_stdio) {
    serve_wire(device, std::cin, std::cout);
    return kExitOk;
  }
  WireServer server(device, port);
  std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
  do {
    server.serve_one();
  } while (!once);
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const SummarizationFailed*>(&e)) return kExitSummarization;
  if (dynamic_cast<const DriverError*>(&e)) return kExitDriver;
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const ScriptExhausted*>(&e) ||
      dynamic_cast<const ReplayMismatch*>(&e))
    return kExitTransport;
  if (dynamic_cast<const Error*>(&e)) return kExitConfig;
  return 1;
}

void install_stderr_logger(bool verbose) {
  auto logger = spdlog::get("migratekit");
  if (!logger) logger = spdlog::stderr_color_mt("migratekit");
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Migrates GUI tests between apps through an app-independent test logic."};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging on stderr");

  std::string out = "out";
  AbstractorConfig abs_config;
  ConcretizerConfig cnc_config;
  LlmOptions llm;
  unsigned seed = 0;

  auto* extract = app.add_subcommand("extract", "extract individual test logic from source test cases");
  std::vector<std::string> extract_files;
  extract->add_option("cases", extract_files, "source test case files")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", out, "output directory")->capture_default_str();

  auto* abstract = app.add_subcommand("abstract", "summarize individual logics into a general test logic");
  std::vector<std::string> logic_files;
  std::string functionality, category;
  abstract->add_option("logics", logic_files, "individual logic files")->required()->check(CLI::ExistingFile);
  abstract->add_option("--functionality", functionality, "functionality under test");
  abstract->add_option("--category", category, "app category");
  abstract->add_option("--max-ratio", abs_config.max_ratio, "upper bound on general/longest source length")
      ->capture_default_str();
  abstract->add_option("--out", out, "output directory")->capture_default_str();
  llm.add_to(*abstract);

  auto* migrate = app.add_subcommand("migrate", "generate a test case for the target app");
  MigrateOptions mopts;
  migrate->add_option("--logic", mopts.logic, "general logic file")->check(CLI::ExistingFile);
  migrate->add_option("--cases", mopts.cases, "source test cases (extracted and summarized first)")
      ->check(CLI::ExistingFile);
  migrate->add_option("--functionality", mopts.functionality, "functionality under test");
  migrate->add_option("--category", mopts.category, "app category");
  migrate->add_option("--device", mopts.device, "sim:<spec> | wire:<host:port | stdio:command>")->required();
  migrate->add_option("--target-app", mopts.target_app, "target app id (defaults to the sim app id)");
  migrate->add_option("--privileged", mopts.privileged, "privileged events/assertions file")->check(CLI::ExistingFile);
  migrate->add_option("--source-case", mopts.source_case, "source case for the lexical mapper")->check(CLI::ExistingFile);
  migrate->add_option("--ground-truth", mopts.ground_truth, "ground-truth target case for alignment")
      ->check(CLI::ExistingFile);
  migrate->add_option("--max-ratio", abs_config.max_ratio, "upper bound on general/longest source length")
      ->capture_default_str();
  migrate->add_option("--max-selection", cnc_config.max_selection, "selection rounds per step")->capture_default_str();
  migrate->add_option("--seed", seed, "tie-breaking seed for the lexical mapper")->capture_default_str();
  migrate->add_option("--out", out, "output directory")->capture_default_str();
  llm.add_to(*migrate);

  auto* eval = app.add_subcommand("eval", "replay migrated cases and compute the metrics");
  std::string suite, eval_case, eval_truth, eval_device;
  int jobs = 1;
  bool timing = false;
  eval->add_option("--suite", suite, "suite manifest")->check(CLI::ExistingFile);
  eval->add_option("--case", eval_case, "single migrated case")->check(CLI::ExistingFile);
  eval->add_option("--ground-truth", eval_truth, "ground truth for --case")->check(CLI::ExistingFile);
  eval->add_option("--device", eval_device, "device for --case");
  eval->add_option("--jobs", jobs, "cases replayed concurrently")->capture_default_str();
  eval->add_flag("--timing", timing, "include wall times in the report");
  eval->add_option("--out", out, "output directory")->capture_default_str();

  auto* coverage = app.add_subcommand("coverage", "coverage capability of generated tests");
  std::vector<std::string> generated;
  std::string coverage_truth;
  coverage->add_option("--generated", generated, "coverage files of generated tests")->required()->check(CLI::ExistingFile);
  coverage->add_option("--ground-truth", coverage_truth, "coverage file of the ground-truth tests")
      ->required()
      ->check(CLI::ExistingFile);

  auto* serve = app.add_subcommand("serve-sim", "serve a simulated app over the device wire protocol");
  std::string serve_app;
  bool serve_stdio = false;
  bool serve_once = false;
  int serve_port = 0;
  serve->add_option("--app", serve_app, "sim app spec")->required()->check(CLI::ExistingFile);
  auto* stdio_flag = serve->add_flag("--stdio", serve_stdio, "serve on standard input/output");
  serve->add_option("--port", serve_port, "TCP port on 127.0.0.1 (0 picks one)")->excludes(stdio_flag);
  serve->add_flag("--once", serve_once, "exit after the first connection");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  install_stderr_logger(verbose);

  try {
    abs_config.validate();
    cnc_config.validate();
    if (*extract) return cmd_extract(extract_files, out);
    if (*abstract) return cmd_abstract(logic_files, functionality, category, abs_config, llm, out);
    if (*migrate) return cmd_migrate(mopts, abs_config, cnc_config, llm, seed, out);
    if (*eval) return cmd_eval(suite, eval_case, eval_truth, eval_device, jobs, timing, out);
    if (*coverage) return cmd_coverage(generated, coverage_truth);
    if (*serve) return cmd_serve_sim(serve_app, serve_stdio, serve_port, serve_once);
  } catch (const SummarizationFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& v : e.violations()) std::cerr << "  " << rule_name(v.rule) << ": " << v.feedback_text << "\n";
    return kExitSummarization;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitConfig;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  for (const auto& a : args) argv.push_back(a.c_str());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

}  // namespace migratekit
