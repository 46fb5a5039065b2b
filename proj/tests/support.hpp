#pragma once

// Shared helpers for the test suites: scratch directories, a RunContext
// harness, canned in-process script behaviors, and warning capture.

#include "labpilot/context.hpp"
#include "labpilot/demo.hpp"
#include "labpilot/experiment.hpp"
#include "labpilot/journal.hpp"
#include "labpilot/mocks.hpp"

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

namespace labpilot::test {

struct TempDir {
  fs::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("labpilot-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// Collects warnings for assertions while still printing nothing.
struct WarnCapture {
  std::vector<std::string> messages;
  WarnSink sink() {
    return [this](const std::string& m) { messages.push_back(m); };
  }
  bool contains(const std::string& needle) const {
    for (const auto& m : messages)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
};

// A test-sized configuration: small turn limits and in-process-friendly
// defaults; budgets keep the spec constants unless a test overrides them.
inline RunConfig test_config() {
  RunConfig c;
  c.agent_turn_limit = 5;
  c.script_timeout_s = 30.0;
  c.backend_retries = 1;
  c.backend_retry_base_ms = 0;
  c.baseline_title = "Fixture Baseline Paper";
  c.baseline_authors = "F. Ixture";
  c.baseline_year = "2020";
  c.baseline_bib_key = "fixture2020";
  return c;
}

// RunContext plus owned journal/rng over a scratch run directory.
struct CtxHarness {
  fs::path run_dir;
  std::unique_ptr<RunJournal> journal;
  std::unique_ptr<JournaledRng> rng;
  WarnCapture warnings;
  RunContext ctx;

  explicit CtxHarness(const fs::path& dir, RunConfig config = test_config(),
                      bool with_journal = true) {
    run_dir = dir;
    fs::create_directories(run_dir);
    ctx.run_dir = run_dir;
    ctx.config = std::move(config);
    if (with_journal) {
      journal = std::make_unique<RunJournal>(run_dir / "journal");
      ctx.journal = journal.get();
    }
    rng = std::make_unique<JournaledRng>(ctx.config.rng_seed, ctx.journal);
    ctx.rng = rng.get();
    ctx.warn = warnings.sink();
  }

  void set_backends(TextBackend* text, CodingAgentBackend* agent, SearchBackend* search) {
    ctx.text = text;
    ctx.agent = agent;
    ctx.search = search;
  }
};

// Creates a baseline workspace under run_dir/workspace with entry stubs so
// validate_workspace passes; behavior comes from the in-process runner.
inline void scaffold_baseline_workspace(const RunContext& ctx) {
  write_file(ctx.workspace_dir() / ctx.config.baseline_entry, "# baseline entry stub\n");
  write_file(ctx.workspace_dir() / ctx.config.plot_entry, "# plot entry stub\n");
}

// ---- in-process script behaviors --------------------------------------------

inline InProcessRunner::ScriptFn write_metrics_fn(const std::string& json_text) {
  return [json_text](const fs::path& ws, std::string& out, std::string&) {
    write_file(ws / "results" / "metrics.json", json_text);
    out = "metrics written\n";
    return 0;
  };
}

inline InProcessRunner::ScriptFn write_plot_fn() {
  return [](const fs::path& ws, std::string& out, std::string&) {
    write_file(ws / "figures" / "plot.png", "PNGSTUB\n");
    out = "plot written\n";
    return 0;
  };
}

inline InProcessRunner::ScriptFn fail_fn(const std::string& message) {
  return [message](const fs::path&, std::string&, std::string& err) {
    err = message + "\n";
    return 1;
  };
}

// A coding agent whose every session immediately completes without writing
// anything; suitable when the runner scripts the trial outcome.
inline ScriptedCodingAgent::Selector complete_only_agent() {
  return [](const PromptBundle&, const AgentPolicy&) {
    SessionScript s;
    AgentTurn done;
    done.complete = true;
    s.turns.push_back(done);
    return s;
  };
}

// A coding agent that never signals completion.
inline ScriptedCodingAgent::Selector never_completing_agent() {
  return [](const PromptBundle&, const AgentPolicy&) { return SessionScript::never_completes(); };
}

}  // namespace labpilot::test
