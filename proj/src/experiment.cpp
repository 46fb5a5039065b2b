#include "labpilot/experiment.hpp"

#include "labpilot/json_util.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <future>
#include <set>
#include <sstream>

namespace labpilot {

using nlohmann::json;

namespace {

std::string pad4(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", n);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// ---- runners -----------------------------------------------------------------

ExecutionRecord ProcessScriptRunner::run(const fs::path& workspace,
                                         const std::string& entry_file,
                                         const fs::path& stdout_file,
                                         const fs::path& stderr_file) {
  ExecOptions opts;
  opts.run_command = config_.run_command;
  opts.timeout_s = config_.script_timeout_s;
  opts.result_globs = config_.result_globs;
  opts.plot_globs = config_.plot_globs;
  opts.stdout_file = stdout_file;
  opts.stderr_file = stderr_file;
  return execute_entry(workspace, entry_file, opts);
}

namespace {

// Content snapshot of all glob-matched files, keyed by workspace-relative
// path. The in-process runner diffs snapshots instead of trusting mtimes,
// which are too coarse for sub-millisecond "executions".
std::map<std::string, std::uint64_t> artifact_snapshot(
    const fs::path& workspace, const std::vector<std::string>& result_globs,
    const std::vector<std::string>& plot_globs) {
  std::map<std::string, std::uint64_t> snap;
  if (!fs::is_directory(workspace)) return snap;
  for (const auto& e : fs::recursive_directory_iterator(workspace)) {
    if (!e.is_regular_file()) continue;
    std::string rel = e.path().lexically_relative(workspace).generic_string();
    bool interesting = false;
    for (const auto& g : result_globs) interesting = interesting || glob_match(g, rel);
    for (const auto& g : plot_globs) interesting = interesting || glob_match(g, rel);
    if (interesting) snap[rel] = fnv1a64(read_file(e.path()));
  }
  return snap;
}

}  // namespace

ExecutionRecord InProcessRunner::run(const fs::path& workspace, const std::string& entry_file,
                                     const fs::path& stdout_file,
                                     const fs::path& stderr_file) {
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();

  ExecutionRecord record;
  record.command = config_.run_command + " " + entry_file;
  record.stdout_path = stdout_file.generic_string();
  record.stderr_path = stderr_file.generic_string();

  auto before = artifact_snapshot(workspace, config_.result_globs, config_.plot_globs);

  std::string out, err;
  ScriptFn fn = dispatch_(workspace, entry_file);
  if (!fn) {
    record.exit_status = {ExitKind::SpawnError, 2};
  } else {
    int rc = fn(workspace, out, err);
    record.exit_status = rc == 0 ? ExitStatus{ExitKind::Success, 0}
                                 : ExitStatus{ExitKind::Failure, rc};
  }
  write_file(stdout_file, out);
  write_file(stderr_file, err);
  record.duration_s = seconds_since(t0);

  auto after = artifact_snapshot(workspace, config_.result_globs, config_.plot_globs);
  for (const auto& [rel, hash] : after) {
    auto it = before.find(rel);
    if (it != before.end() && it->second == hash) continue;  // unchanged
    for (const auto& g : config_.result_globs)
      if (glob_match(g, rel)) {
        record.artifacts.result_files.push_back(rel);
        break;
      }
    for (const auto& g : config_.plot_globs)
      if (glob_match(g, rel)) {
        record.artifacts.plot_files.push_back(rel);
        break;
      }
  }
  return record;
}

// ---- plain data ---------------------------------------------------------------

json StageOutcome::to_json() const {
  return {{"stage", to_string(stage)},
          {"carried", carried},
          {"node_id", node_id},
          {"trials_run", trials_run},
          {"iterations_used", iterations_used}};
}

StageOutcome StageOutcome::from_json(const json& j) {
  StageOutcome o;
  std::string st = j.value("stage", "Stage1");
  o.stage = st == "Stage2" ? Stage::Stage2 : st == "Stage3" ? Stage::Stage3 : Stage::Stage1;
  o.carried = j.value("carried", false);
  o.node_id = j.value("node_id", "");
  o.trials_run = j.value("trials_run", 0);
  o.iterations_used = j.value("iterations_used", 0);
  return o;
}

const char* to_string(AblationKind k) {
  return k == AblationKind::Hyperparameter ? "Hyperparameter" : "Component";
}

json AblationIdea::to_json() const {
  return {{"id", id},
          {"kind", to_string(kind)},
          {"description", description},
          {"entry_file", entry_file}};
}

AblationIdea AblationIdea::from_json(const json& j) {
  AblationIdea a;
  a.id = j.value("id", "");
  a.kind = j.value("kind", "Hyperparameter") == "Component" ? AblationKind::Component
                                                            : AblationKind::Hyperparameter;
  a.description = j.value("description", "");
  a.entry_file = j.value("entry_file", "");
  return a;
}

json BaselineResult::to_json() const {
  return {{"metrics", metrics_to_json(metrics)}, {"summary_path", summary_path}};
}

BaselineResult BaselineResult::from_json(const json& j) {
  BaselineResult b;
  if (j.contains("metrics")) b.metrics = metrics_from_json(j.at("metrics"));
  b.summary_path = j.value("summary_path", "");
  return b;
}

// ---- selection policies --------------------------------------------------------

Stage1Action select_stage1_action(const std::vector<std::string>& buggy_nodes,
                                  JournaledRng& rng) {
  if (buggy_nodes.empty()) return Stage1Action{true, ""};
  std::size_t idx = rng.uniform_index(buggy_nodes.size() + 1, "stage1_action");
  if (idx == 0) return Stage1Action{true, ""};
  return Stage1Action{false, buggy_nodes[idx - 1]};
}

std::string select_stage2_parent(const std::string& stage1_node,
                                 const std::optional<std::string>& best_node, double p,
                                 JournaledRng& rng) {
  if (!best_node) return stage1_node;
  return rng.bernoulli(p, "stage2_parent") ? stage1_node : *best_node;
}

std::vector<AblationIdea> generate_ablation_ideas(TextBackend& text, const RunConfig& config,
                                                  const std::string& method_description,
                                                  int n) {
  if (trim(method_description).empty())
    throw InputError("generate_ablation_ideas: method description must be non-empty");
  if (n < 1) throw InputError("generate_ablation_ideas: n must be >= 1");

  int want_hyper = (n + 1) / 2;
  int want_comp = n / 2;

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Based on the method description, propose ablation studies as JSON "
      "{\"hyperparameter\": [...], \"component\": [...]}: " +
      std::to_string(want_hyper) +
      " hyperparameter ablations analyzing the sensitivity of the method to key "
      "hyperparameters, and " +
      std::to_string(want_comp) +
      " component-level ablations assessing the contribution of each component. Each list "
      "element is a one-sentence description.";
  prompt.attachments.push_back({"method_description", method_description, std::nullopt});

  json payload = parse_json_payload(text.complete_text(prompt));
  std::vector<std::string> hyper, comp;
  if (payload.contains("hyperparameter"))
    for (const auto& d : payload.at("hyperparameter")) hyper.push_back(d.get<std::string>());
  if (payload.contains("component"))
    for (const auto& d : payload.at("component")) comp.push_back(d.get<std::string>());

  std::vector<AblationIdea> ideas;
  size_t hi = 0, ci = 0;
  for (int i = 0; i < n; ++i) {
    AblationIdea idea;
    idea.kind = (i % 2 == 0) ? AblationKind::Hyperparameter : AblationKind::Component;
    if (idea.kind == AblationKind::Hyperparameter) {
      if (hi >= hyper.size()) break;
      idea.description = hyper[hi++];
      idea.entry_file = config.hyperparam_entry;
    } else {
      if (ci >= comp.size()) break;
      idea.description = comp[ci++];
      idea.entry_file = config.component_entry;
    }
    idea.id = "ablation-" + std::to_string(i + 1);
    ideas.push_back(std::move(idea));
  }
  return ideas;
}

// ---- engine ---------------------------------------------------------------------

struct ExperimentEngine::TrialInputs {
  std::string trial_id;
  int trial_index = 0;
  std::string node_id;
  std::string entry_file;
  PromptBundle prompt;
  std::string key;
};

ExperimentEngine::ExperimentEngine(RunContext& ctx, ScriptRunner& runner)
    : ctx_(ctx), runner_(runner) {}

namespace {

AgentPolicy policy_for(const RunConfig& config, PromptRole role, const fs::path& workspace) {
  AgentPolicy policy;
  policy.allowed_commands =
      std::set<std::string>(config.allowed_commands.begin(), config.allowed_commands.end());
  policy.execution_allowed = false;
  policy.run_command = config.run_command;
  policy.turn_limit = config.agent_turn_limit;
  if (auto it = config.role_turn_limits.find(to_string(role));
      it != config.role_turn_limits.end())
    policy.turn_limit = it->second;
  policy.workspace_root = workspace;
  return policy;
}

}  // namespace

std::map<std::string, MetricValue> ExperimentEngine::parse_metric_files(
    const fs::path& ws, const std::vector<std::string>& rel) const {
  std::map<std::string, MetricValue> metrics;
  std::vector<std::string> files = rel;
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    fs::path p = ws / f;
    if (p.extension() != ".json") continue;
    json j = json::parse(read_file(p), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ctx_.warn("result file is not a JSON object, skipped: " + f);
      continue;
    }
    const json& src = j.contains("metrics") && j.at("metrics").is_object() ? j.at("metrics") : j;
    for (auto it = src.begin(); it != src.end(); ++it) {
      MetricValue v;
      if (it->is_number()) {
        v.value = it->get<double>();
        v.text = it->dump();
      } else if (it->is_string()) {
        v.text = it->get<std::string>();
        try {
          v.value = std::stod(v.text);
        } catch (...) {
          continue;  // non-numeric string, not a metric
        }
      } else {
        continue;
      }
      metrics[it.key()] = std::move(v);
    }
  }
  return metrics;
}

std::string ExperimentEngine::new_node(Stage stage, const std::optional<std::string>& parent,
                                       const fs::path& source_ws,
                                       const std::string& entry_file) {
  std::string id = "node-" + pad4(++node_counter_);
  json data = ctx_.once("exp/node/" + id, "NodeCreated", [&] {
    fs::path ws = ctx_.nodes_dir() / id / "workspace";
    copy_tree(source_ws, ws);
    ExperimentNode node;
    node.id = id;
    node.parent = parent;
    node.stage = stage;
    node.workspace = ctx_.rel(ws);
    node.entry_file = entry_file;
    write_json_file(ctx_.nodes_dir() / id / "node.json", node.to_json());
    return node.to_json();
  });
  ExperimentNode node = ExperimentNode::from_json(data);
  nodes_[id] = node;
  return id;
}

void ExperimentEngine::apply_trial(const TrialRecord& rec) {
  trials_.push_back(rec);
  auto& node = nodes_.at(rec.node_id);
  node.trials.push_back(rec.id);
  node.status = rec.classified;
  const MetricSpec spec = ctx_.config.primary_spec();
  if (rec.classified.code == CodeStatus::NonBuggy && rec.metrics.count(spec.name)) {
    const MetricValue& v = rec.metrics.at(spec.name);
    if (!node.best_metric || surpasses_baseline(v, *node.best_metric, spec))
      node.best_metric = v;
  }
  write_json_file(ctx_.nodes_dir() / rec.node_id / "node.json", node.to_json());
}

TrialRecord ExperimentEngine::execute_trial(const TrialInputs& in) {
  const RunConfig& config = ctx_.config;
  fs::path tdir = ctx_.trials_dir() / in.trial_id;
  fs::create_directories(tdir);
  fs::path ws = ctx_.abs(nodes_.at(in.node_id).workspace);

  AgentPolicy policy = policy_for(config, in.prompt.role, ws);
  SessionOptions sopts;
  sopts.transcript_file = tdir / "transcript.txt";
  sopts.transcript_label = ctx_.rel(sopts.transcript_file);
  SessionResult session = retry_transient(ctx_, "coding session " + in.trial_id, [&] {
    return run_coding_session(*ctx_.agent, in.prompt, policy, sopts);
  });

  ExecutionRecord entry_rec =
      runner_.run(ws, in.entry_file, tdir / "stdout.log", tdir / "stderr.log");
  ExecutionRecord plot_rec =
      runner_.run(ws, config.plot_entry, tdir / "plot_stdout.log", tdir / "plot_stderr.log");

  std::set<std::string> result_files(entry_rec.artifacts.result_files.begin(),
                                     entry_rec.artifacts.result_files.end());
  result_files.insert(plot_rec.artifacts.result_files.begin(),
                      plot_rec.artifacts.result_files.end());
  std::set<std::string> plot_files(entry_rec.artifacts.plot_files.begin(),
                                   entry_rec.artifacts.plot_files.end());
  plot_files.insert(plot_rec.artifacts.plot_files.begin(), plot_rec.artifacts.plot_files.end());

  TrialRecord rec;
  rec.id = in.trial_id;
  rec.node_id = in.node_id;
  rec.index = in.trial_index;
  rec.session = {session.turns_used, session.completed, session.transcript_digest};
  // Classification is by artifact presence alone; the freshness rule in
  // detect_artifacts keeps stale baseline outputs from masking a buggy trial.
  rec.classified = classify_trial(!result_files.empty(), !plot_files.empty());
  if (rec.classified.code == CodeStatus::NonBuggy)
    rec.metrics =
        parse_metric_files(ws, {result_files.begin(), result_files.end()});
  rec.timestamp = iso_timestamp_now();

  json exec_json{{"entry", entry_rec.to_json()},
                 {"plot", plot_rec.to_json()},
                 {"result_files", std::vector<std::string>(result_files.begin(),
                                                           result_files.end())},
                 {"plot_files",
                  std::vector<std::string>(plot_files.begin(), plot_files.end())}};
  // Paths inside records stay run-dir-relative.
  exec_json["entry"]["stdout_path"] = ctx_.rel(tdir / "stdout.log");
  exec_json["entry"]["stderr_path"] = ctx_.rel(tdir / "stderr.log");
  exec_json["plot"]["stdout_path"] = ctx_.rel(tdir / "plot_stdout.log");
  exec_json["plot"]["stderr_path"] = ctx_.rel(tdir / "plot_stderr.log");
  write_json_file(tdir / "execution.json", exec_json);
  rec.execution = ctx_.rel(tdir / "execution.json");
  write_json_file(tdir / "record.json", rec.to_json());
  return rec;
}

TrialRecord ExperimentEngine::run_trial_unit(const TrialInputs& in) {
  TrialRecord rec;
  if (auto m = ctx_.memo(in.key)) {
    rec = TrialRecord::from_json(*m);
  } else {
    rec = execute_trial(in);
    ctx_.once(in.key, "TrialCommitted", [&] { return rec.to_json(); });
  }
  apply_trial(rec);
  return rec;
}

PromptBundle ExperimentEngine::implement_prompt(const IdeaCard& idea) const {
  const RunConfig& config = ctx_.config;
  PromptBundle prompt;
  prompt.role = PromptRole::Implement;
  prompt.body =
      "Implement the research idea below on top of the baseline codebase in your workspace. "
      "Write a directly executable script named " + config.stage1_entry +
      " that runs the proposed method end to end and writes its metrics as JSON files under "
      "results/. The visualization script " + config.plot_entry +
      " is executed by the host afterwards. You may explore the workspace with " +
      join(config.allowed_commands, " and ") +
      "; execution commands are run by the host, not by you.";
  prompt.attachments.push_back({"idea", idea.to_json().dump(2), std::nullopt});
  return prompt;
}

PromptBundle ExperimentEngine::debug_prompt(const ExperimentNode& node) const {
  const RunConfig& config = ctx_.config;
  PromptBundle prompt;
  prompt.role = PromptRole::Debug;
  prompt.body =
      "The previous attempt in this workspace was classified Buggy: executing " +
      node.entry_file +
      " did not produce a fresh result file. Debug and fix the implementation so the script "
      "runs to completion and writes its metrics as JSON under results/. Runtime feedback "
      "from the failed execution is attached.";

  std::string feedback = "(no prior execution feedback)";
  if (!node.trials.empty()) {
    fs::path exec_file = ctx_.trials_dir() / node.trials.back() / "execution.json";
    if (fs::exists(exec_file)) {
      json j = read_json_file(exec_file);
      ExecutionRecord entry_rec = ExecutionRecord::from_json(j.at("entry"));
      entry_rec.stdout_path = ctx_.abs(entry_rec.stdout_path).generic_string();
      entry_rec.stderr_path = ctx_.abs(entry_rec.stderr_path).generic_string();
      feedback = build_debug_feedback(entry_rec, config.debug_tail_lines);
    }
  }
  prompt.attachments.push_back({"runtime_feedback", feedback, std::nullopt});
  return prompt;
}

BaselineResult ExperimentEngine::run_baseline() {
  const RunConfig& config = ctx_.config;
  fs::path ws = ctx_.workspace_dir();
  auto report = validate_workspace(ws, {config.baseline_entry, config.plot_entry});
  if (!report.ok)
    throw FatalError("baseline workspace is missing required entries: " +
                     join(report.missing, ", "));

  json data = ctx_.once("exp/baseline", "StepCommitted", [&]() -> json {
    fs::path bdir = ctx_.run_dir / "baseline";
    fs::create_directories(bdir);
    ExecutionRecord entry_rec =
        runner_.run(ws, config.baseline_entry, bdir / "stdout.log", bdir / "stderr.log");
    if (!entry_rec.exit_status.success())
      throw FatalError("baseline execution failed: " + to_string(entry_rec.exit_status) +
                       "; the run cannot proceed");
    ExecutionRecord plot_rec = runner_.run(ws, config.plot_entry, bdir / "plot_stdout.log",
                                           bdir / "plot_stderr.log");
    if (!plot_rec.exit_status.success())
      ctx_.warn("baseline plot script failed: " + to_string(plot_rec.exit_status));

    if (entry_rec.artifacts.result_files.empty())
      throw FatalError("baseline produced no result file; the run cannot proceed");
    auto metrics = parse_metric_files(ws, entry_rec.artifacts.result_files);
    if (!metrics.count(config.primary_metric))
      throw FatalError("baseline results lack the primary metric '" + config.primary_metric +
                       "'");

    json settings = json::array();
    json row{{"name", "baseline"}, {"params", json::object()}};
    json mm = json::object();
    for (const auto& [name, v] : metrics) mm[name] = v.text;
    row["metrics"] = mm;
    json arts = json::array();
    for (const auto& p : plot_rec.artifacts.plot_files) arts.push_back(ctx_.rel(ws / p));
    for (const auto& p : entry_rec.artifacts.plot_files) arts.push_back(ctx_.rel(ws / p));
    row["artifacts"] = arts;
    settings.push_back(row);

    json summary{{"description", "Baseline method executed on the prepared workspace"},
                 {"settings", settings}};
    fs::path spath = ctx_.summaries_dir() / "baseline_summary.json";
    write_json_file(spath, summary);

    BaselineResult result;
    result.metrics = metrics;
    result.summary_path = ctx_.rel(spath);
    return result.to_json();
  });
  return BaselineResult::from_json(data);
}

StageOutcome ExperimentEngine::run_stage1(const IdeaCard& idea) {
  const RunConfig& config = ctx_.config;
  const MetricSpec spec = config.primary_spec();
  auto t0 = std::chrono::steady_clock::now();
  ctx_.once("exp/stage1/start", "StageStarted", [] { return json{{"stage", "Stage1"}}; });

  std::optional<std::string> carried;
  int waves = 0;
  int trials_run = 0;

  for (int wave = 1; wave <= config.stage1_iterations && !carried; ++wave) {
    waves = wave;

    // Pick this wave's pool: the first wave starts fresh; later waves choose
    // per slot between a fresh node and debugging a buggy one.
    std::vector<std::pair<std::string, bool>> pool;  // (node id, fresh this wave)
    if (wave == 1) {
      for (int i = 0; i < config.stage1_pool_size; ++i)
        pool.emplace_back(
            new_node(Stage::Stage1, std::nullopt, ctx_.workspace_dir(), config.stage1_entry),
            true);
    } else {
      std::vector<std::string> available;
      for (const auto& t : trials_) {
        // creation-ordered buggy Stage 1 nodes, deduplicated
        const auto& node = nodes_.at(t.node_id);
        if (node.stage == Stage::Stage1 && node.status.code == CodeStatus::Buggy &&
            std::find(available.begin(), available.end(), node.id) == available.end())
          available.push_back(node.id);
      }
      for (int i = 0; i < config.stage1_pool_size; ++i) {
        Stage1Action action = select_stage1_action(available, *ctx_.rng);
        if (action.fresh) {
          pool.emplace_back(new_node(Stage::Stage1, std::nullopt, ctx_.workspace_dir(),
                                     config.stage1_entry),
                            true);
        } else {
          pool.emplace_back(action.node_id, false);
          available.erase(std::find(available.begin(), available.end(), action.node_id));
        }
      }
    }

    // Assemble trial inputs sequentially (ids and prompts are deterministic),
    // then run the wave concurrently and commit results in node order.
    std::vector<TrialInputs> inputs;
    for (const auto& [node_id, fresh] : pool) {
      TrialInputs in;
      in.trial_index = ++trial_counter_;
      in.trial_id = "trial-" + pad4(in.trial_index);
      in.node_id = node_id;
      in.entry_file = config.stage1_entry;
      in.prompt = fresh ? implement_prompt(idea) : debug_prompt(nodes_.at(node_id));
      in.key = "exp/trial/" + in.trial_id;
      inputs.push_back(std::move(in));
    }

    std::vector<std::optional<json>> memos(inputs.size());
    std::vector<std::future<TrialRecord>> futures(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
      memos[i] = ctx_.memo(inputs[i].key);
      if (!memos[i])
        futures[i] = std::async(std::launch::async,
                                [this, in = inputs[i]] { return execute_trial(in); });
    }

    std::vector<TrialRecord> wave_records;
    for (size_t i = 0; i < inputs.size(); ++i) {
      TrialRecord rec;
      if (memos[i]) {
        rec = TrialRecord::from_json(*memos[i]);
      } else {
        rec = futures[i].get();
        ctx_.once(inputs[i].key, "TrialCommitted", [&] { return rec.to_json(); });
      }
      apply_trial(rec);
      wave_records.push_back(rec);
      ++trials_run;
    }

    // Wave verdict: any NonBuggy node is carried forward; among several,
    // prefer the best primary metric, then the earliest trial.
    if (auto best = best_node(wave_records, spec)) {
      carried = *best;
    } else {
      for (const auto& rec : wave_records)
        if (rec.classified.code == CodeStatus::NonBuggy) {
          carried = rec.node_id;
          break;
        }
    }
  }

  StageOutcome computed;
  computed.stage = Stage::Stage1;
  computed.carried = carried.has_value();
  computed.node_id = carried.value_or("");
  computed.trials_run = trials_run;
  computed.iterations_used = waves;

  json data = ctx_.once("exp/stage1/outcome", "StageCompleted",
                        [&] { return computed.to_json(); });
  StageOutcome outcome = StageOutcome::from_json(data);
  outcome.elapsed_s = seconds_since(t0);
  return outcome;
}

StageOutcome ExperimentEngine::run_stage2(const std::string& stage1_node_id,
                                          const BaselineResult& baseline) {
  const RunConfig& config = ctx_.config;
  const MetricSpec spec = config.primary_spec();
  auto t0 = std::chrono::steady_clock::now();

  if (!nodes_.count(stage1_node_id))
    throw InputError("run_stage2: unknown Stage 1 node '" + stage1_node_id + "'");
  if (nodes_.at(stage1_node_id).status.code != CodeStatus::NonBuggy)
    throw InputError("run_stage2: Stage 1 node must be NonBuggy");
  if (!baseline.metrics.count(spec.name))
    throw InputError("run_stage2: baseline lacks the primary metric");
  const MetricValue baseline_value = baseline.metrics.at(spec.name);

  ctx_.once("exp/stage2/start", "StageStarted", [] { return json{{"stage", "Stage2"}}; });

  std::optional<std::string> carried;
  std::optional<std::string> best;
  std::vector<TrialRecord> stage2_trials;
  int trials_run = 0;

  for (int t = 1; t <= config.stage2_iterations && !carried; ++t) {
    std::string parent =
        select_stage2_parent(stage1_node_id, best, config.stage2_parent_prob, *ctx_.rng);
    fs::path parent_ws = ctx_.abs(nodes_.at(parent).workspace);
    std::string node_id = new_node(Stage::Stage2, parent, parent_ws, config.stage2_entry);

    // Parent implementation travels with the prompt so the improvement is
    // grounded in real code.
    std::string parent_code;
    for (const std::string& candidate : {config.stage2_entry, config.stage1_entry}) {
      fs::path p = parent_ws / candidate;
      if (fs::exists(p)) {
        parent_code = read_file(p);
        break;
      }
    }

    TrialInputs in;
    in.trial_index = ++trial_counter_;
    in.trial_id = "trial-" + pad4(in.trial_index);
    in.node_id = node_id;
    in.entry_file = config.stage2_entry;
    in.key = "exp/trial/" + in.trial_id;
    in.prompt.role = PromptRole::Improve;
    in.prompt.body =
        "Stage 2 trial " + std::to_string(t) + " of " + std::to_string(config.stage2_iterations) +
        ". First propose one concrete improvement to the current method, then apply it by "
        "writing the full implementation into a new entry file named " + config.stage2_entry +
        " (do not overwrite earlier results). The goal is to strictly surpass the baseline on "
        "the primary metric '" + spec.name + "'. Metrics must be written as JSON under "
        "results/.";
    in.prompt.attachments.push_back({"current_code", parent_code, std::nullopt});
    json baseline_metrics = json::object();
    for (const auto& [name, v] : baseline.metrics) baseline_metrics[name] = v.text;
    in.prompt.attachments.push_back({"baseline_metrics", baseline_metrics.dump(2), std::nullopt});
    if (best && nodes_.at(*best).best_metric)
      in.prompt.attachments.push_back(
          {"best_so_far", nodes_.at(*best).best_metric->to_json().dump(), std::nullopt});

    TrialRecord rec = run_trial_unit(in);
    ++trials_run;
    stage2_trials.push_back(rec);
    best = best_node(stage2_trials, spec);

    if (rec.classified.code == CodeStatus::NonBuggy && rec.metrics.count(spec.name) &&
        surpasses_baseline(rec.metrics.at(spec.name), baseline_value, spec))
      carried = node_id;
  }

  StageOutcome computed;
  computed.stage = Stage::Stage2;
  computed.carried = carried.has_value();
  computed.node_id = carried.value_or("");
  computed.trials_run = trials_run;
  computed.iterations_used = trials_run;

  if (carried) {
    ctx_.once("exp/summary/improved", "SummaryWritten", [&]() -> json {
      const TrialRecord& winner = stage2_trials.back();
      json settings = json::array();
      json base_row{{"name", "baseline"}, {"params", json::object()}};
      json bm = json::object();
      for (const auto& [name, v] : baseline.metrics) bm[name] = v.text;
      base_row["metrics"] = bm;
      base_row["artifacts"] = json::array();
      settings.push_back(base_row);

      json imp_row{{"name", "improved method"},
                   {"params", {{"trial", winner.id}, {"node", winner.node_id}}}};
      json im = json::object();
      for (const auto& [name, v] : winner.metrics) im[name] = v.text;
      imp_row["metrics"] = im;
      json arts = json::array();
      json exec = read_json_file(ctx_.abs(winner.execution));
      fs::path ws = ctx_.abs(nodes_.at(winner.node_id).workspace);
      for (const auto& p : exec.value("plot_files", std::vector<std::string>{}))
        arts.push_back(ctx_.rel(ws / p));
      imp_row["artifacts"] = arts;
      settings.push_back(imp_row);

      json summary{
          {"description",
           "Improved method compared against the baseline on the primary metric '" +
               spec.name + "'"},
          {"settings", settings}};
      fs::path spath = ctx_.summaries_dir() / "improved_research_summary.json";
      write_json_file(spath, summary);
      return json{{"path", ctx_.rel(spath)}};
    });
  }

  json data = ctx_.once("exp/stage2/outcome", "StageCompleted",
                        [&] { return computed.to_json(); });
  StageOutcome outcome = StageOutcome::from_json(data);
  outcome.elapsed_s = seconds_since(t0);
  return outcome;
}

std::optional<std::string> ExperimentEngine::describe_method(const std::string& stage2_node_id) {
  const RunConfig& config = ctx_.config;
  if (!nodes_.count(stage2_node_id))
    throw InputError("describe_method: unknown node '" + stage2_node_id + "'");

  json data = ctx_.once("exp/describe", "StepCommitted", [&]() -> json {
    // The session runs in a scratch copy so concluded-stage workspaces stay
    // untouched.
    fs::path scratch = ctx_.run_dir / "describe" / "workspace";
    copy_tree(ctx_.abs(nodes_.at(stage2_node_id).workspace), scratch);

    PromptBundle prompt;
    prompt.role = PromptRole::Write;
    prompt.body =
        "Produce a precise textual description of the improved method implemented in " +
        config.stage2_entry +
        ". Write it to a file named method_description.md in the workspace and mention the "
        "entry file name explicitly so the description stays grounded in the code.";
    fs::path code = scratch / config.stage2_entry;
    if (fs::exists(code))
      prompt.attachments.push_back({"stage2_code", read_file(code), std::nullopt});

    for (int attempt = 1; attempt <= 2; ++attempt) {
      AgentPolicy policy = policy_for(config, prompt.role, scratch);
      SessionOptions sopts;
      sopts.transcript_file =
          ctx_.run_dir / "describe" / ("transcript-" + std::to_string(attempt) + ".txt");
      sopts.transcript_label = ctx_.rel(sopts.transcript_file);
      SessionResult session = retry_transient(ctx_, "describe session", [&] {
        return run_coding_session(*ctx_.agent, prompt, policy, sopts);
      });
      fs::path desc = scratch / "method_description.md";
      if (session.completed && fs::exists(desc)) {
        std::string text = read_file(desc);
        if (text.find(config.stage2_entry) != std::string::npos) {
          write_file(ctx_.summaries_dir() / "method_description.md", text);
          return json{{"failed", false}, {"text", text}};
        }
        ctx_.warn("method description does not reference " + config.stage2_entry +
                  "; retrying");
      } else {
        ctx_.warn("describe session attempt " + std::to_string(attempt) +
                  " did not complete");
      }
    }
    return json{{"failed", true}};
  });

  if (data.value("failed", true)) {
    ctx_.warn("method description failed twice; recorded a failure marker");
    return std::nullopt;
  }
  return data.value("text", "");
}

StageOutcome ExperimentEngine::run_stage3(const std::string& stage2_node_id,
                                          const std::string& method_description) {
  const RunConfig& config = ctx_.config;
  auto t0 = std::chrono::steady_clock::now();
  if (trim(method_description).empty())
    throw InputError("run_stage3: method description must be available");
  if (!nodes_.count(stage2_node_id))
    throw InputError("run_stage3: unknown node '" + stage2_node_id + "'");

  ctx_.once("exp/stage3/start", "StageStarted", [] { return json{{"stage", "Stage3"}}; });

  json ideas_json = ctx_.once("exp/stage3/ideas", "StepCommitted", [&] {
    auto ideas = retry_transient(ctx_, "ablation ideation", [&] {
      return generate_ablation_ideas(*ctx_.text, config, method_description,
                                     config.stage3_max_iterations);
    });
    json arr = json::array();
    for (const auto& idea : ideas) arr.push_back(idea.to_json());
    return json{{"ideas", arr}};
  });
  std::vector<AblationIdea> ideas;
  for (const auto& j : ideas_json.at("ideas")) ideas.push_back(AblationIdea::from_json(j));

  fs::path stage2_ws = ctx_.abs(nodes_.at(stage2_node_id).workspace);
  int completed = 0;
  int iterations = 0;
  // rows per kind, in trial order
  std::map<std::string, json> settings{{"Hyperparameter", json::array()},
                                       {"Component", json::array()}};

  for (const auto& idea : ideas) {
    if (completed >= config.ablation_sufficiency ||
        iterations >= config.stage3_max_iterations)
      break;
    ++iterations;

    std::string node_id = new_node(Stage::Stage3, stage2_node_id, stage2_ws, idea.entry_file);

    TrialInputs in;
    in.trial_index = ++trial_counter_;
    in.trial_id = "trial-" + pad4(in.trial_index);
    in.node_id = node_id;
    in.entry_file = idea.entry_file;
    in.key = "exp/trial/" + in.trial_id;
    in.prompt.role = PromptRole::AblationImplement;
    in.prompt.body =
        "Implement the " + std::string(to_string(idea.kind)) +
        " ablation study described below. Write the experiment into a new entry file named " +
        idea.entry_file +
        " (do not overwrite the improved method's results). Each evaluated setting must land "
        "in the result JSON under results/ as {\"settings\": [{\"name\", \"params\", "
        "\"metrics\"}]}.";
    in.prompt.attachments.push_back({"ablation_idea", idea.to_json().dump(2), std::nullopt});
    in.prompt.attachments.push_back({"method_description", method_description, std::nullopt});

    TrialRecord rec = run_trial_unit(in);
    if (rec.classified.code != CodeStatus::NonBuggy) {
      ctx_.warn("ablation trial " + rec.id + " was buggy; recorded and skipped");
      continue;
    }
    ++completed;

    // Collect setting rows from the trial's fresh result files.
    fs::path ws = ctx_.abs(nodes_.at(node_id).workspace);
    json exec = read_json_file(ctx_.abs(rec.execution));
    json plot_arts = json::array();
    for (const auto& p : exec.value("plot_files", std::vector<std::string>{}))
      plot_arts.push_back(ctx_.rel(ws / p));

    bool rows_found = false;
    for (const auto& f : exec.value("result_files", std::vector<std::string>{})) {
      fs::path p = ws / f;
      if (p.extension() != ".json" || !fs::exists(p)) continue;
      json j = json::parse(read_file(p), nullptr, false);
      if (j.is_discarded() || !j.contains("settings") || !j.at("settings").is_array()) continue;
      for (const auto& row : j.at("settings")) {
        if (!row.is_object() || !row.contains("name") || !row.contains("metrics")) continue;
        json out_row = row;
        if (!out_row.contains("params")) out_row["params"] = json::object();
        if (!out_row.contains("artifacts")) out_row["artifacts"] = plot_arts;
        settings.at(to_string(idea.kind)).push_back(out_row);
        rows_found = true;
      }
    }
    if (!rows_found) {
      json row{{"name", idea.description}, {"params", json::object()}};
      json mm = json::object();
      for (const auto& [name, v] : rec.metrics) mm[name] = v.text;
      row["metrics"] = mm;
      row["artifacts"] = plot_arts;
      settings.at(to_string(idea.kind)).push_back(row);
    }
  }

  for (const auto& [kind, file, description] :
       {std::tuple{"Hyperparameter", "hyperparam_ablation_summary.json",
                   "Hyperparameter ablations analyzing the sensitivity of the improved method"},
        std::tuple{"Component", "component_ablation_summary.json",
                   "Component-level ablations assessing each component's contribution"}}) {
    std::string kind_name = kind;
    std::string file_name = file;
    std::string desc = description;
    ctx_.once("exp/summary/" + file_name, "SummaryWritten", [&]() -> json {
      json summary{{"description", desc}, {"settings", settings.at(kind_name)}};
      fs::path spath = ctx_.summaries_dir() / file_name;
      write_json_file(spath, summary);
      return json{{"path", ctx_.rel(spath)}};
    });
  }

  StageOutcome computed;
  computed.stage = Stage::Stage3;
  computed.carried = completed > 0;
  computed.node_id = stage2_node_id;
  computed.trials_run = iterations;
  computed.iterations_used = iterations;

  json data = ctx_.once("exp/stage3/outcome", "StageCompleted",
                        [&] { return computed.to_json(); });
  StageOutcome outcome = StageOutcome::from_json(data);
  outcome.elapsed_s = seconds_since(t0);
  return outcome;
}

}  // namespace labpilot
