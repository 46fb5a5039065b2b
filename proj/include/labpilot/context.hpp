#pragma once

#include "labpilot/agents.hpp"
#include "labpilot/core.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/journal.hpp"
#include "labpilot/search.hpp"
#include "labpilot/util.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

namespace labpilot {

// Everything a pipeline phase needs: run-directory layout, configuration,
// journal with unit-of-work memoization, journaled RNG, and the pluggable
// backends. Journal and RNG may be null in unit tests; `once` then simply
// executes its body.
struct RunContext {
  fs::path run_dir;
  RunConfig config;
  RunJournal* journal = nullptr;
  JournaledRng* rng = nullptr;
  TextBackend* text = nullptr;
  CodingAgentBackend* agent = nullptr;
  SearchBackend* search = nullptr;
  WarnSink warn = stderr_warn_sink();

  fs::path workspace_dir() const { return run_dir / "workspace"; }
  fs::path nodes_dir() const { return run_dir / "nodes"; }
  fs::path trials_dir() const { return run_dir / "trials"; }
  fs::path summaries_dir() const { return run_dir / "summaries"; }
  fs::path writing_dir() const { return run_dir / "writing"; }
  fs::path report_dir() const { return run_dir / "report"; }
  fs::path paper_dir() const { return run_dir / "paper"; }
  fs::path ideas_dir() const { return run_dir / "ideas"; }
  fs::path cache_dir() const { return run_dir / "cache"; }

  std::string rel(const fs::path& p) const {
    auto r = relative_within(run_dir, p);
    return r ? *r : p.generic_string();
  }
  fs::path abs(const std::string& rel_path) const { return run_dir / rel_path; }

  // Journaled result of the unit keyed `key`, if it already committed.
  std::optional<nlohmann::json> memo(const std::string& key) const {
    if (!journal) return std::nullopt;
    if (const JournalEvent* ev = journal->find(key)) return ev->data;
    return std::nullopt;
  }

  // Commit-once execution: a unit whose key is already journaled is not
  // re-run; its recorded data is returned instead. The body must finish its
  // side effects before returning, since the journal record is the commit.
  nlohmann::json once(const std::string& key, const std::string& type,
                      const std::function<nlohmann::json()>& body) {
    if (auto m = memo(key)) return *m;
    nlohmann::json data = body();
    if (journal) journal->append(type, key, data);
    return data;
  }
};

// Retries `fn` on TransientError with exponential backoff, journaling each
// retry as a warning. The last failure escalates to FatalError.
template <typename F>
auto retry_transient(const RunContext& ctx, const std::string& what, F&& fn)
    -> decltype(fn()) {
  int attempts = std::max(1, ctx.config.backend_retries);
  std::chrono::milliseconds delay(std::max(0, ctx.config.backend_retry_base_ms));
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransientError& e) {
      if (attempt >= attempts)
        throw FatalError(what + " failed after " + std::to_string(attempts) +
                         " attempts: " + e.what());
      ctx.warn(what + " attempt " + std::to_string(attempt) + " failed (" + e.what() +
               "); retrying");
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

}  // namespace labpilot
