#pragma once

// Deterministic scripted backends. These honor the exact adapter contracts
// the live backends implement and are what the test suites and dry runs
// drive the pipeline with.

#include "labpilot/agents.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/search.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace labpilot {

// ---- text backend ----------------------------------------------------------

// Replays canned responses in order; running past the script is a test
// configuration error, not a backend failure.
class ScriptedTextBackend : public TextBackend {
public:
  explicit ScriptedTextBackend(std::vector<std::string> responses)
      : responses_(std::move(responses)) {}

  std::string complete_text(const PromptBundle& prompt) override {
    prompt.validate();
    std::lock_guard<std::mutex> lock(mu_);
    if (cursor_ >= responses_.size())
      throw TestConfigError("scripted text backend exhausted after " +
                            std::to_string(responses_.size()) + " responses");
    return responses_[cursor_++];
  }

private:
  std::vector<std::string> responses_;
  size_t cursor_ = 0;
  std::mutex mu_;
};

class CallbackTextBackend : public TextBackend {
public:
  using Fn = std::function<std::string(const PromptBundle&)>;
  explicit CallbackTextBackend(Fn fn) : fn_(std::move(fn)) {}

  std::string complete_text(const PromptBundle& prompt) override {
    prompt.validate();
    return fn_(prompt);
  }

private:
  Fn fn_;
};

// Decorator that records every prompt passing through, for assertions on
// prompt contents (e.g. that guard clauses are embedded).
class RecordingTextBackend : public TextBackend {
public:
  explicit RecordingTextBackend(TextBackend& inner) : inner_(inner) {}

  std::string complete_text(const PromptBundle& prompt) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      prompts_.push_back(prompt);
    }
    return inner_.complete_text(prompt);
  }

  std::vector<PromptBundle> prompts() const {
    std::lock_guard<std::mutex> lock(mu_);
    return prompts_;
  }

private:
  TextBackend& inner_;
  std::vector<PromptBundle> prompts_;
  mutable std::mutex mu_;
};

// ---- coding agent ---------------------------------------------------------

struct SessionScript {
  std::vector<AgentTurn> turns;

  // Convenience: a session that writes one file and signals completion.
  static SessionScript write_and_complete(const std::string& path, const std::string& content) {
    SessionScript s;
    AgentTurn t;
    t.writes.push_back({path, content});
    t.complete = true;
    s.turns.push_back(std::move(t));
    return s;
  }
  // A session that works forever without signalling completion.
  static SessionScript never_completes() { return SessionScript{}; }
};

// Replays one SessionScript per session. Scripts come either from a FIFO
// queue (cursor serialized under a mutex) or from a selector function when
// per-node dispatch is needed. A session that runs out of scripted turns
// keeps sending idle turns, so it hits the host's turn limit.
class ScriptedCodingAgent : public CodingAgentBackend {
public:
  using Selector = std::function<SessionScript(const PromptBundle&, const AgentPolicy&)>;

  ScriptedCodingAgent() = default;
  explicit ScriptedCodingAgent(Selector selector) : selector_(std::move(selector)) {}

  void push_script(SessionScript script) {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back(std::move(script));
  }

  std::unique_ptr<AgentSession> start_session(const PromptBundle& prompt,
                                              const AgentPolicy& policy) override {
    SessionScript script;
    if (selector_) {
      script = selector_(prompt, policy);
    } else {
      std::lock_guard<std::mutex> lock(mu_);
      if (queue_.empty())
        throw TestConfigError("scripted coding agent has no session script left");
      script = std::move(queue_.front());
      queue_.pop_front();
    }
    return std::make_unique<Session>(std::move(script));
  }

private:
  class Session : public AgentSession {
  public:
    explicit Session(SessionScript script) : script_(std::move(script)) {}
    AgentTurn next_turn(const std::string&) override {
      if (cursor_ < script_.turns.size()) return script_.turns[cursor_++];
      AgentTurn idle;
      idle.note = "thinking";
      return idle;
    }

  private:
    SessionScript script_;
    size_t cursor_ = 0;
  };

  Selector selector_;
  std::deque<SessionScript> queue_;
  std::mutex mu_;
};

// ---- literature search -------------------------------------------------------

class ScriptedSearchBackend : public SearchBackend {
public:
  using Fn = std::function<std::vector<PaperHit>(const std::string&, int)>;

  explicit ScriptedSearchBackend(Fn fn) : fn_(std::move(fn)) {}
  // Fixed result set for every query.
  explicit ScriptedSearchBackend(std::vector<PaperHit> hits)
      : fn_([hits = std::move(hits)](const std::string&, int) { return hits; }) {}

  void set_citing(Fn fn) { citing_fn_ = std::move(fn); }

  std::vector<PaperHit> search(const std::string& query, int limit) override {
    return fn_(query, limit);
  }
  std::vector<PaperHit> citing(const std::string& work_id, int limit) override {
    return citing_fn_ ? citing_fn_(work_id, limit) : std::vector<PaperHit>{};
  }

private:
  Fn fn_;
  Fn citing_fn_;
};

}  // namespace labpilot
