#pragma once

#include "labpilot/util.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

// ---- trial classification ----------------------------------------------

enum class CodeStatus { Buggy, NonBuggy };
enum class PlotStatus { PlotBuggy, NonPlotBuggy };

// Both axes are always recorded; plot status only matters for carry-forward
// decisions once the code status is NonBuggy.
struct NodeStatus {
  CodeStatus code = CodeStatus::Buggy;
  PlotStatus plot = PlotStatus::PlotBuggy;

  bool operator==(const NodeStatus&) const = default;
};

// A trial is NonBuggy iff a fresh result file appeared, Non-Plot-Buggy iff a
// fresh visualization appeared. Total over all four input combinations.
NodeStatus classify_trial(bool result_present, bool plot_present);

const char* to_string(CodeStatus s);
const char* to_string(PlotStatus s);

// ---- metrics -------------------------------------------------------------

enum class MetricDirection { HigherIsBetter, LowerIsBetter };

struct MetricSpec {
  std::string name;
  MetricDirection direction = MetricDirection::HigherIsBetter;
  bool primary = false;
};

// Numeric value plus the exact source token it was parsed from. The text is
// what summaries and generated tables carry, so transcription stays verbatim.
struct MetricValue {
  double value = 0.0;
  std::string text;

  static MetricValue of(double v);
  nlohmann::json to_json() const;
  static MetricValue from_json(const nlohmann::json& j);
};

using MetricMap = std::map<std::string, MetricValue>;

nlohmann::json metrics_to_json(const MetricMap& m);
MetricMap metrics_from_json(const nlohmann::json& j);

// Strict improvement of candidate over baseline in the spec's direction.
// Equality is never an improvement. Throws InputError on non-finite values.
bool surpasses_baseline(const MetricValue& candidate, const MetricValue& baseline,
                        const MetricSpec& spec);

// ---- nodes and trials ----------------------------------------------------

enum class Stage { Stage1, Stage2, Stage3 };

const char* to_string(Stage s);

struct ExperimentNode {
  std::string id;
  std::optional<std::string> parent;
  Stage stage = Stage::Stage1;
  std::string workspace;  // run-dir-relative; disjoint across nodes
  std::string entry_file;
  NodeStatus status;
  std::vector<std::string> trials;  // append-only
  std::optional<MetricValue> best_metric;

  nlohmann::json to_json() const;
  static ExperimentNode from_json(const nlohmann::json& j);
};

struct SessionDigest {
  int turns_used = 0;
  bool completed = false;
  std::string transcript;  // run-dir-relative path of the transcript file
};

struct TrialRecord {
  std::string id;
  std::string node_id;
  int index = 0;  // 1-based, strictly increasing per run
  SessionDigest session;
  std::string execution;  // run-dir-relative path of the execution record
  MetricMap metrics;  // present only when NonBuggy
  NodeStatus classified;
  std::string timestamp;

  nlohmann::json to_json() const;
  static TrialRecord from_json(const nlohmann::json& j);
};

// Node whose best NonBuggy trial optimizes the primary metric. Ties break to
// the lowest trial index; nullopt when no NonBuggy trial carries the metric.
std::optional<std::string> best_node(const std::vector<TrialRecord>& trials,
                                     const MetricSpec& spec);

// ---- run configuration ----------------------------------------------------

struct RunConfig {
  // budgets and probabilities
  int stage1_iterations = 12;
  int stage2_iterations = 50;
  int stage1_pool_size = 4;
  int agent_turn_limit = 30;
  std::map<std::string, int> role_turn_limits;  // per-role overrides, keyed by role name
  double stage2_parent_prob = 0.5;
  int target_pages = 8;
  int reflection_rounds = 3;
  int ablation_sufficiency = 8;
  int stage3_max_iterations = 20;
  double script_timeout_s = 3600.0;
  std::uint64_t rng_seed = 1;

  // primary metric
  std::string primary_metric = "auroc";
  MetricDirection primary_metric_direction = MetricDirection::HigherIsBetter;

  // execution
  std::string run_command = "python3";
  std::vector<std::string> result_globs = {"results/**.json", "results/**.csv",
                                           "results/**.tsv", "results/**.txt"};
  std::vector<std::string> plot_globs = {"figures/**.png", "figures/**.jpg",
                                         "figures/**.jpeg", "figures/**.pdf",
                                         "figures/**.svg"};
  int debug_tail_lines = 50;
  std::vector<std::string> allowed_commands = {"ls", "grep"};

  // entry-file names
  std::string baseline_entry = "baseline.py";
  std::string plot_entry = "plot.py";
  std::string stage1_entry = "proposed_method.py";
  std::string stage2_entry = "improved_proposed_method.py";
  std::string hyperparam_entry = "hyperparam_ablation_study.py";
  std::string component_entry = "component_ablation_study.py";

  // idea phase
  int idea_count = 10;
  int idea_max_refinements = 3;
  std::optional<int> idea_select_index;   // 1-based override
  std::vector<int> idea_reject_indices;   // 1-based human reject list

  // writing phase
  std::vector<std::string> section_list = {"Abstract",     "Introduction", "Related Work",
                                           "Method",       "Experiments",  "Conclusion",
                                           "Appendix"};
  std::string reflection_order = "interleaved";  // interleaved | blocked
  int max_length_adjust_steps = 10;
  int bib_query_budget = 15;
  int lines_per_page = 50;         // stub renderer calibration
  std::string compile_command;     // empty -> stub renderer
  std::string style_check_command; // empty -> no style-check attachment text

  // baseline self-citation entry
  std::string baseline_bib_key = "baselinework";
  std::string baseline_title;
  std::string baseline_authors;
  std::string baseline_year;
  std::string baseline_venue;
  std::string baseline_external_id;  // optional; lets novelty checks pull citing papers

  // backends
  std::string text_backend = "demo";    // demo | http
  std::string agent_backend = "demo";   // demo
  std::string search_backend = "demo";  // demo | http
  std::string llm_endpoint;
  std::string llm_model;
  std::string search_endpoint;
  int backend_retries = 3;
  int backend_retry_base_ms = 250;

  MetricSpec primary_spec() const;
  // Throws InputError when counts are < 1 or probabilities leave [0,1].
  void validate() const;
};

}  // namespace labpilot
