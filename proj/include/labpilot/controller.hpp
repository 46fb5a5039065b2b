#pragma once

#include "labpilot/context.hpp"
#include "labpilot/experiment.hpp"
#include "labpilot/journal.hpp"
#include "labpilot/writing.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

// Thrown by the crash-injection test hook; deliberately not an Error so no
// recovery path swallows it. Simulates process death at a journal boundary.
struct CrashInjected {
  std::uint64_t seq = 0;
};

// Scaffolds a run directory from the prepared inputs: baseline workspace
// snapshot, paper sources, immutable config snapshot, manifest, journal.
// Refuses to touch an existing run directory.
void init_run(const fs::path& baseline_dir, const fs::path& paper_dir,
              const fs::path& config_file, const fs::path& run_dir);

// The operational shell around the pipeline: owns the journal, RNG, and
// backends for one run directory, and drives the idea / experiment / write
// phases with commit-once semantics so an interrupted run resumes from the
// first incomplete unit of work.
class Controller {
public:
  struct Backends {
    TextBackend* text = nullptr;
    CodingAgentBackend* agent = nullptr;
    SearchBackend* search = nullptr;
    ScriptRunner* runner = nullptr;
  };

  struct Options {
    fs::path run_dir;
    std::uint64_t crash_after_events = 0;  // test hook; 0 disables
    Backends backends;                     // overrides; null members come from config
  };

  explicit Controller(Options opts);

  // Executes the requested phases in canonical order (idea, experiment,
  // write); already-completed phases are skipped, unmet prerequisites refuse.
  void run_phases(const std::vector<std::string>& phases);
  // Continues from the journal: every incomplete phase, in order.
  void resume();

  bool phase_complete(const std::string& phase) const;
  nlohmann::json status() const;
  // Deterministic provenance report; also written under report/.
  nlohmann::json generate_report();

  void record_fatal(const std::string& message);

  RunContext& context() { return ctx_; }
  RunJournal& journal() { return *journal_; }

private:
  void run_idea_phase();
  void run_experiment_phase();
  void run_write_phase();
  void update_manifest_phase(const std::string& phase, const std::string& status);
  void index_artifacts();

  fs::path run_dir_;
  std::unique_ptr<RunJournal> journal_;
  std::unique_ptr<JournaledRng> rng_;

  std::unique_ptr<TextBackend> owned_text_;
  std::unique_ptr<CodingAgentBackend> owned_agent_;
  std::unique_ptr<SearchBackend> owned_search_inner_;
  std::unique_ptr<SearchBackend> owned_search_;
  std::unique_ptr<ScriptRunner> owned_runner_;
  ScriptRunner* runner_ = nullptr;

  RunContext ctx_;
};

}  // namespace labpilot
