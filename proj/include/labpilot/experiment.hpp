#pragma once

#include "labpilot/context.hpp"
#include "labpilot/core.hpp"
#include "labpilot/exec.hpp"
#include "labpilot/ideas.hpp"
#include "labpilot/journal.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

// Seam between the engine and the exec harness. The production runner spawns
// real subprocesses; in-process runners back the mock-driven suites.
class ScriptRunner {
public:
  virtual ~ScriptRunner() = default;
  virtual ExecutionRecord run(const fs::path& workspace, const std::string& entry_file,
                              const fs::path& stdout_file, const fs::path& stderr_file) = 0;
};

class ProcessScriptRunner : public ScriptRunner {
public:
  explicit ProcessScriptRunner(const RunConfig& config) : config_(config) {}
  ExecutionRecord run(const fs::path& workspace, const std::string& entry_file,
                      const fs::path& stdout_file, const fs::path& stderr_file) override;

private:
  RunConfig config_;
};

// Runs entry files as C++ callbacks instead of subprocesses; artifacts still
// land on disk, and freshness comes from a content snapshot diff (mtimes are
// too coarse for sub-millisecond "executions"), so everything downstream
// behaves as in production.
class InProcessRunner : public ScriptRunner {
public:
  // Returns the exit code; may append to the captured streams.
  using ScriptFn =
      std::function<int(const fs::path& workspace, std::string& out, std::string& err)>;
  using Dispatch = std::function<ScriptFn(const fs::path& workspace, const std::string& entry)>;

  InProcessRunner(Dispatch dispatch, const RunConfig& config)
      : dispatch_(std::move(dispatch)), config_(config) {}

  ExecutionRecord run(const fs::path& workspace, const std::string& entry_file,
                      const fs::path& stdout_file, const fs::path& stderr_file) override;

private:
  Dispatch dispatch_;
  RunConfig config_;
};

// ---- stage bookkeeping -----------------------------------------------------

struct StageOutcome {
  Stage stage = Stage::Stage1;
  bool carried = false;
  std::string node_id;  // set when carried
  int trials_run = 0;
  int iterations_used = 0;
  double elapsed_s = 0.0;  // wall time; kept out of the journal

  nlohmann::json to_json() const;
  static StageOutcome from_json(const nlohmann::json& j);
};

enum class AblationKind { Hyperparameter, Component };

const char* to_string(AblationKind k);

struct AblationIdea {
  std::string id;
  AblationKind kind = AblationKind::Hyperparameter;
  std::string description;
  std::string entry_file;  // determined by the kind

  nlohmann::json to_json() const;
  static AblationIdea from_json(const nlohmann::json& j);
};

struct BaselineResult {
  std::map<std::string, MetricValue> metrics;
  std::string summary_path;  // run-dir-relative

  nlohmann::json to_json() const;
  static BaselineResult from_json(const nlohmann::json& j);
};

// ---- selection policies ----------------------------------------------------

struct Stage1Action {
  bool fresh = true;
  std::string node_id;  // set when debugging an existing buggy node
};

// Uniform choice over {fresh-from-baseline} plus the available buggy nodes;
// forced fresh (no draw) when none are buggy.
Stage1Action select_stage1_action(const std::vector<std::string>& buggy_nodes,
                                  JournaledRng& rng);

// With probability p the Stage 1 node, otherwise the current best node;
// forced to the Stage 1 node (no draw) when no best exists yet.
std::string select_stage2_parent(const std::string& stage1_node,
                                 const std::optional<std::string>& best_node, double p,
                                 JournaledRng& rng);

// Alternating-kind ablation ideas (hyperparameter first); descriptions come
// from the text backend, entry files from the kind.
std::vector<AblationIdea> generate_ablation_ideas(TextBackend& text, const RunConfig& config,
                                                  const std::string& method_description, int n);

// ---- engine -----------------------------------------------------------------

class ExperimentEngine {
public:
  ExperimentEngine(RunContext& ctx, ScriptRunner& runner);

  // Executes the baseline once, parses its metrics (the primary metric must
  // be present), and writes summaries/baseline_summary.json. A buggy
  // baseline is a fatal configuration error.
  BaselineResult run_baseline();

  // Wave loop: up to pool-size node trials per iteration, early exit at the
  // first NonBuggy node, hard budget of stage1_iterations waves.
  StageOutcome run_stage1(const IdeaCard& idea);

  // Sequential improvement trials with probabilistic parent selection;
  // terminates at the first NonBuggy trial strictly surpassing the baseline
  // on the primary metric.
  StageOutcome run_stage2(const std::string& stage1_node_id, const BaselineResult& baseline);

  // Coding-agent session producing a textual description of the Stage 2
  // method (must name the Stage 2 entry file). One retry; nullopt after a
  // recorded failure marker.
  std::optional<std::string> describe_method(const std::string& stage2_node_id);

  // Ablation loop over alternating idea kinds until enough completed results
  // exist (or the iteration cap is hit); buggy ablations are recorded and
  // skipped. Writes the two ablation summary files.
  StageOutcome run_stage3(const std::string& stage2_node_id,
                          const std::string& method_description);

  const std::map<std::string, ExperimentNode>& nodes() const { return nodes_; }
  const std::vector<TrialRecord>& trials() const { return trials_; }

private:
  struct TrialInputs;

  std::string new_node(Stage stage, const std::optional<std::string>& parent,
                       const fs::path& source_ws, const std::string& entry_file);
  TrialRecord run_trial_unit(const TrialInputs& in);
  TrialRecord execute_trial(const TrialInputs& in);
  void apply_trial(const TrialRecord& rec);
  std::map<std::string, MetricValue> parse_metric_files(const fs::path& ws,
                                                        const std::vector<std::string>& rel) const;
  PromptBundle implement_prompt(const IdeaCard& idea) const;
  PromptBundle debug_prompt(const ExperimentNode& node) const;

  RunContext& ctx_;
  ScriptRunner& runner_;
  std::map<std::string, ExperimentNode> nodes_;
  std::vector<TrialRecord> trials_;
  int node_counter_ = 0;
  int trial_counter_ = 0;
};

}  // namespace labpilot
