#pragma once

// Deterministic demonstration backends: a synthetic "competent" coding agent,
// text backend, and literature index. They let the full pipeline run end to
// end with no network, no GPU, and no external tools, which is also how the
// end-to-end suites drive it.

#include "labpilot/agents.hpp"
#include "labpilot/core.hpp"
#include "labpilot/mocks.hpp"
#include "labpilot/search.hpp"

#include <memory>

namespace labpilot {

class DemoTextBackend : public TextBackend {
public:
  std::string complete_text(const PromptBundle& prompt) override;
};

// Coding agent whose sessions are a deterministic function of the prompt and
// workspace: in Stage 1 one node per wave succeeds, Stage 2 improves on a
// fixed metric schedule and surpasses the baseline at trial 3, ablations
// always complete.
class DemoCodingAgent : public CodingAgentBackend {
public:
  explicit DemoCodingAgent(RunConfig config);
  std::unique_ptr<AgentSession> start_session(const PromptBundle& prompt,
                                              const AgentPolicy& policy) override;

private:
  SessionScript script_for(const PromptBundle& prompt, const AgentPolicy& policy) const;
  RunConfig config_;
  ScriptedCodingAgent inner_;
};

class DemoSearchBackend : public SearchBackend {
public:
  std::vector<PaperHit> search(const std::string& query, int limit) override;
};

// Scaffolds a self-contained sample project (baseline workspace, paper
// sources, template, config) under `dir`, ready for `init`.
void write_demo_baseline(const fs::path& dir);

}  // namespace labpilot
