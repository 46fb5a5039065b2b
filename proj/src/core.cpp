#include "labpilot/core.hpp"

#include "labpilot/errors.hpp"

#include <cmath>
#include <sstream>

namespace labpilot {

NodeStatus classify_trial(bool result_present, bool plot_present) {
  NodeStatus s;
  s.code = result_present ? CodeStatus::NonBuggy : CodeStatus::Buggy;
  s.plot = plot_present ? PlotStatus::NonPlotBuggy : PlotStatus::PlotBuggy;
  return s;
}

const char* to_string(CodeStatus s) {
  return s == CodeStatus::NonBuggy ? "NonBuggy" : "Buggy";
}

const char* to_string(PlotStatus s) {
  return s == PlotStatus::NonPlotBuggy ? "NonPlotBuggy" : "PlotBuggy";
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Stage1: return "Stage1";
    case Stage::Stage2: return "Stage2";
    case Stage::Stage3: return "Stage3";
  }
  return "Stage1";
}

MetricValue MetricValue::of(double v) {
  MetricValue m;
  m.value = v;
  std::ostringstream ss;
  ss << v;
  m.text = ss.str();
  return m;
}

nlohmann::json MetricValue::to_json() const { return {{"value", value}, {"text", text}}; }

MetricValue MetricValue::from_json(const nlohmann::json& j) {
  MetricValue m;
  m.value = j.value("value", 0.0);
  m.text = j.value("text", "");
  return m;
}

nlohmann::json metrics_to_json(const MetricMap& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : m) j[name] = v.to_json();
  return j;
}

MetricMap metrics_from_json(const nlohmann::json& j) {
  MetricMap m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = MetricValue::from_json(*it);
  return m;
}

namespace {

NodeStatus status_from_json(const nlohmann::json& j) {
  NodeStatus s;
  s.code = j.value("code", "Buggy") == "NonBuggy" ? CodeStatus::NonBuggy : CodeStatus::Buggy;
  s.plot = j.value("plot", "PlotBuggy") == "NonPlotBuggy" ? PlotStatus::NonPlotBuggy
                                                          : PlotStatus::PlotBuggy;
  return s;
}

nlohmann::json status_to_json(const NodeStatus& s) {
  return {{"code", to_string(s.code)}, {"plot", to_string(s.plot)}};
}

Stage stage_from_string(const std::string& s) {
  if (s == "Stage2") return Stage::Stage2;
  if (s == "Stage3") return Stage::Stage3;
  return Stage::Stage1;
}

}  // namespace

nlohmann::json ExperimentNode::to_json() const {
  nlohmann::json j{{"id", id},
                   {"stage", to_string(stage)},
                   {"workspace", workspace},
                   {"entry_file", entry_file},
                   {"status", status_to_json(status)},
                   {"trials", trials}};
  if (parent) j["parent"] = *parent;
  if (best_metric) j["best_metric"] = best_metric->to_json();
  return j;
}

ExperimentNode ExperimentNode::from_json(const nlohmann::json& j) {
  ExperimentNode n;
  n.id = j.value("id", "");
  if (j.contains("parent")) n.parent = j.at("parent").get<std::string>();
  n.stage = stage_from_string(j.value("stage", "Stage1"));
  n.workspace = j.value("workspace", "");
  n.entry_file = j.value("entry_file", "");
  if (j.contains("status")) n.status = status_from_json(j.at("status"));
  if (j.contains("trials")) n.trials = j.at("trials").get<std::vector<std::string>>();
  if (j.contains("best_metric")) n.best_metric = MetricValue::from_json(j.at("best_metric"));
  return n;
}

nlohmann::json TrialRecord::to_json() const {
  return {{"id", id},
          {"node_id", node_id},
          {"index", index},
          {"session",
           {{"turns_used", session.turns_used},
            {"completed", session.completed},
            {"transcript", session.transcript}}},
          {"execution", execution},
          {"metrics", metrics_to_json(metrics)},
          {"classified", status_to_json(classified)},
          {"timestamp", timestamp}};
}

TrialRecord TrialRecord::from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.id = j.value("id", "");
  r.node_id = j.value("node_id", "");
  r.index = j.value("index", 0);
  if (j.contains("session")) {
    const auto& s = j.at("session");
    r.session.turns_used = s.value("turns_used", 0);
    r.session.completed = s.value("completed", false);
    r.session.transcript = s.value("transcript", "");
  }
  r.execution = j.value("execution", "");
  if (j.contains("metrics")) r.metrics = metrics_from_json(j.at("metrics"));
  if (j.contains("classified")) r.classified = status_from_json(j.at("classified"));
  r.timestamp = j.value("timestamp", "");
  return r;
}

bool surpasses_baseline(const MetricValue& candidate, const MetricValue& baseline,
                        const MetricSpec& spec) {
  if (!std::isfinite(candidate.value) || !std::isfinite(baseline.value))
    throw InputError("surpasses_baseline: non-finite value for metric '" + spec.name + "'");
  if (spec.direction == MetricDirection::HigherIsBetter)
    return candidate.value > baseline.value;
  return candidate.value < baseline.value;
}

std::optional<std::string> best_node(const std::vector<TrialRecord>& trials,
                                     const MetricSpec& spec) {
  const TrialRecord* best = nullptr;
  for (const auto& t : trials) {
    if (t.classified.code != CodeStatus::NonBuggy) continue;
    auto it = t.metrics.find(spec.name);
    if (it == t.metrics.end()) continue;
    if (!best) {
      best = &t;
      continue;
    }
    double cur = it->second.value;
    double bst = best->metrics.at(spec.name).value;
    bool better = spec.direction == MetricDirection::HigherIsBetter ? cur > bst : cur < bst;
    bool tie = cur == bst;
    if (better || (tie && t.index < best->index)) best = &t;
  }
  if (!best) return std::nullopt;
  return best->node_id;
}

MetricSpec RunConfig::primary_spec() const {
  return MetricSpec{primary_metric, primary_metric_direction, true};
}

void RunConfig::validate() const {
  auto at_least_one = [](int v, const char* name) {
    if (v < 1) throw InputError(std::string("config: ") + name + " must be >= 1");
  };
  at_least_one(stage1_iterations, "stage1_iterations");
  at_least_one(stage2_iterations, "stage2_iterations");
  at_least_one(stage1_pool_size, "stage1_pool_size");
  at_least_one(agent_turn_limit, "agent_turn_limit");
  at_least_one(target_pages, "target_pages");
  at_least_one(reflection_rounds, "reflection_rounds");
  at_least_one(ablation_sufficiency, "ablation_sufficiency");
  at_least_one(stage3_max_iterations, "stage3_max_iterations");
  at_least_one(idea_count, "idea_count");
  at_least_one(max_length_adjust_steps, "max_length_adjust_steps");
  at_least_one(lines_per_page, "lines_per_page");
  if (stage2_parent_prob < 0.0 || stage2_parent_prob > 1.0)
    throw InputError("config: stage2_parent_prob must lie in [0,1]");
  if (script_timeout_s <= 0.0) throw InputError("config: script_timeout_s must be positive");
  if (primary_metric.empty()) throw InputError("config: primary_metric must be set");
}

}  // namespace labpilot
