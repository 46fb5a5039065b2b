#include "labpilot/controller.hpp"

#include "labpilot/bib.hpp"
#include "labpilot/config.hpp"
#include "labpilot/demo.hpp"
#include "labpilot/http_backends.hpp"
#include "labpilot/ideas.hpp"
#include "labpilot/json_util.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <set>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

namespace labpilot {

using nlohmann::json;

namespace {

constexpr const char* kPhases[] = {"idea", "experiment", "write"};

// Exclusive per-run-directory lock; released on destruction or process death.
class FileLock {
public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw InputError("cannot open lock file: " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw InputError("another process holds the run lock: " + path.string());
    }
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

private:
  int fd_ = -1;
};

fs::path find_paper_text(const fs::path& paper_dir) {
  for (const char* name : {"paper.txt", "paper.md", "paper.markdown"}) {
    if (fs::exists(paper_dir / name)) return paper_dir / name;
  }
  return {};
}

fs::path find_bib_file(const fs::path& paper_dir) {
  std::vector<fs::path> bibs;
  if (fs::is_directory(paper_dir))
    for (const auto& e : fs::directory_iterator(paper_dir))
      if (e.is_regular_file() && e.path().extension() == ".bib") bibs.push_back(e.path());
  std::sort(bibs.begin(), bibs.end());
  return bibs.empty() ? fs::path() : bibs.front();
}

}  // namespace

void init_run(const fs::path& baseline_dir, const fs::path& paper_dir,
              const fs::path& config_file, const fs::path& run_dir) {
  RunConfig config = parse_config_file(config_file);

  if (fs::exists(run_dir))
    throw InputError("run directory already exists (init is once-only): " +
                     run_dir.string());

  std::vector<std::string> missing;
  if (!fs::is_directory(baseline_dir)) {
    missing.push_back("baseline directory " + baseline_dir.string());
  } else {
    auto report =
        validate_workspace(baseline_dir, {config.baseline_entry, config.plot_entry});
    for (const auto& m : report.missing) missing.push_back("baseline entry " + m);
  }
  if (!fs::is_directory(paper_dir)) {
    missing.push_back("paper sources directory " + paper_dir.string());
  } else {
    if (find_paper_text(paper_dir).empty())
      missing.push_back("paper text (paper.txt or paper.md)");
    if (find_bib_file(paper_dir).empty()) missing.push_back("baseline bibliography (*.bib)");
  }
  if (!missing.empty())
    throw InputError("init validation failed; missing: " + join(missing, "; "));

  copy_tree(baseline_dir, run_dir / "workspace");
  copy_tree(paper_dir, run_dir / "paper");
  for (const char* d : {"nodes", "trials", "summaries", "writing", "report", "ideas", "cache"})
    fs::create_directories(run_dir / d);
  write_file(run_dir / "lock", "");

  std::string fingerprint = dir_fingerprint(run_dir / "workspace");
  json manifest{{"run_id", "run-" + fingerprint.substr(0, 12)},
                {"created_at", iso_timestamp_now()},
                {"baseline_fingerprint", fingerprint},
                {"config", config_to_json(config)},
                {"phases",
                 {{"idea", "pending"}, {"experiment", "pending"}, {"write", "pending"}}},
                {"artifacts", json::array()}};
  write_json_file(run_dir / "manifest.json", manifest);

  RunJournal journal(run_dir / "journal");
  journal.append("RunInitialized", "init", {{"baseline_fingerprint", fingerprint}});
}

Controller::Controller(Options opts) : run_dir_(fs::absolute(opts.run_dir).lexically_normal()) {
  if (!fs::exists(run_dir_ / "manifest.json"))
    throw InputError("not a run directory (missing manifest.json): " + run_dir_.string());
  json manifest = read_json_file(run_dir_ / "manifest.json");
  RunConfig config = config_from_json(manifest.at("config"));

  journal_ = std::make_unique<RunJournal>(run_dir_ / "journal");
  if (opts.crash_after_events > 0) {
    std::uint64_t crash_at = opts.crash_after_events;
    journal_->after_append = [crash_at](std::uint64_t seq) {
      if (seq >= crash_at) throw CrashInjected{seq};
    };
  }

  ctx_.run_dir = run_dir_;
  ctx_.config = config;
  ctx_.journal = journal_.get();
  ctx_.warn = [this](const std::string& msg) {
    std::cerr << "warning: " << msg << "\n";
    journal_->warn(msg);
  };
  if (journal_->recovered_tail())
    ctx_.warn("journal tail was damaged; truncated to the last valid record");

  rng_ = std::make_unique<JournaledRng>(config.rng_seed, journal_.get());
  ctx_.rng = rng_.get();

  if (opts.backends.text) {
    ctx_.text = opts.backends.text;
  } else if (config.text_backend == "demo") {
    owned_text_ = std::make_unique<DemoTextBackend>();
    ctx_.text = owned_text_.get();
  } else if (config.text_backend == "http") {
    std::string endpoint = config.llm_endpoint;
    if (const char* e = std::getenv("LABPILOT_LLM_ENDPOINT"); e && *e) endpoint = e;
    owned_text_ = std::make_unique<HttpTextBackend>(endpoint, config.llm_model);
    ctx_.text = owned_text_.get();
  } else {
    throw InputError("unknown text_backend '" + config.text_backend + "'");
  }

  if (opts.backends.agent) {
    ctx_.agent = opts.backends.agent;
  } else if (config.agent_backend == "demo") {
    owned_agent_ = std::make_unique<DemoCodingAgent>(config);
    ctx_.agent = owned_agent_.get();
  } else {
    throw InputError("unknown agent_backend '" + config.agent_backend +
                     "' (the coding agent is pluggable; 'demo' ships with the tool)");
  }

  if (opts.backends.search) {
    ctx_.search = opts.backends.search;
  } else {
    if (config.search_backend == "demo") {
      owned_search_inner_ = std::make_unique<DemoSearchBackend>();
    } else if (config.search_backend == "http") {
      std::string endpoint = config.search_endpoint;
      if (const char* e = std::getenv("LABPILOT_SEARCH_ENDPOINT"); e && *e) endpoint = e;
      owned_search_inner_ = std::make_unique<HttpSearchBackend>(endpoint);
    } else {
      throw InputError("unknown search_backend '" + config.search_backend + "'");
    }
    owned_search_ =
        std::make_unique<CachedSearch>(*owned_search_inner_, ctx_.cache_dir());
    ctx_.search = owned_search_.get();
  }

  if (opts.backends.runner) {
    runner_ = opts.backends.runner;
  } else {
    owned_runner_ = std::make_unique<ProcessScriptRunner>(config);
    runner_ = owned_runner_.get();
  }
}

bool Controller::phase_complete(const std::string& phase) const {
  return journal_->find("phase/" + phase) != nullptr;
}

void Controller::update_manifest_phase(const std::string& phase, const std::string& status) {
  json manifest = read_json_file(run_dir_ / "manifest.json");
  manifest["phases"][phase] = status;
  write_json_file(run_dir_ / "manifest.json", manifest);
}

void Controller::index_artifacts() {
  json manifest = read_json_file(run_dir_ / "manifest.json");
  json artifacts = json::array();
  auto add_if_exists = [&](const fs::path& p) {
    if (fs::exists(p)) artifacts.push_back(ctx_.rel(p));
  };
  add_if_exists(run_dir_ / "ideas" / "ideas.json");
  add_if_exists(run_dir_ / "ideas" / "selected.json");
  for (const char* s : {"baseline_summary.json", "improved_research_summary.json",
                        "component_ablation_summary.json", "hyperparam_ablation_summary.json",
                        "method_description.md"})
    add_if_exists(ctx_.summaries_dir() / s);
  for (const char* s : {"component_ablation_summary_table.tex",
                        "hyperparam_ablation_summary_table.tex", "verified.bib", "paper.tex",
                        "paper.pdf", "manuscript.json"})
    add_if_exists(ctx_.writing_dir() / s);
  add_if_exists(ctx_.report_dir() / "report.json");
  manifest["artifacts"] = artifacts;
  write_json_file(run_dir_ / "manifest.json", manifest);
}

void Controller::run_phases(const std::vector<std::string>& phases) {
  std::set<std::string> requested(phases.begin(), phases.end());
  for (const auto& p : requested)
    if (p != "idea" && p != "experiment" && p != "write")
      throw InputError("unknown phase '" + p + "' (expected idea, experiment, write)");

  FileLock lock(run_dir_ / "lock");

  std::string previous;
  for (const char* phase : kPhases) {
    bool wanted = requested.count(phase) > 0;
    if (wanted && !previous.empty() && !phase_complete(previous))
      throw InputError("phase '" + std::string(phase) + "' requires completed '" + previous +
                       "' first");
    if (wanted && !phase_complete(phase)) {
      ctx_.once("phase/" + std::string(phase) + "/started", "PhaseStarted",
                [&] { return json{{"phase", phase}}; });
      update_manifest_phase(phase, "running");
      if (std::string(phase) == "idea") run_idea_phase();
      else if (std::string(phase) == "experiment") run_experiment_phase();
      else run_write_phase();
      ctx_.once("phase/" + std::string(phase), "PhaseCompleted",
                [&] { return json{{"phase", phase}}; });
      update_manifest_phase(phase, "complete");
      index_artifacts();
    } else if (wanted) {
      ctx_.warn("phase '" + std::string(phase) + "' already complete; skipped");
    }
    previous = phase;
  }
}

void Controller::resume() {
  std::vector<std::string> remaining;
  for (const char* phase : kPhases)
    if (!phase_complete(phase)) remaining.push_back(phase);
  if (remaining.empty()) {
    std::cerr << "run already complete; nothing to resume\n";
    return;
  }
  // A phase can only be incomplete if everything after it is too, so the
  // remaining list is always a suffix of the canonical order.
  run_phases(remaining);
}

void Controller::record_fatal(const std::string& message) {
  journal_->append("FatalError", "", {{"message", message}});
}

// ---- idea phase -----------------------------------------------------------------

void Controller::run_idea_phase() {
  fs::path text_file = find_paper_text(ctx_.paper_dir());
  if (text_file.empty())
    throw FatalError("paper text missing under paper/ (expected paper.txt or paper.md)");
  std::string paper_text = read_file(text_file);

  IdeaEngine engine(*ctx_.text, *ctx_.search, ctx_.warn);
  if (!ctx_.config.baseline_external_id.empty())
    engine.set_baseline_work(ctx_.config.baseline_external_id);

  json lims_json = ctx_.once("idea/limitations", "StepCommitted", [&] {
    auto lims = retry_transient(ctx_, "limitation extraction",
                                [&] { return engine.extract_limitations(paper_text); });
    json arr = json::array();
    for (const auto& l : lims) arr.push_back(l.to_json());
    return json{{"limitations", arr}};
  });
  std::vector<Limitation> limitations;
  for (const auto& l : lims_json.at("limitations"))
    limitations.push_back(Limitation::from_json(l));

  json cards_json = ctx_.once("idea/cards", "IdeaCommitted", [&] {
    auto cards = retry_transient(ctx_, "idea proposal", [&] {
      return engine.propose_ideas(paper_text, limitations, ctx_.config.idea_count);
    });
    json arr = json::array();
    for (const auto& c : cards) arr.push_back(c.to_json());
    return json{{"cards", arr}};
  });
  std::vector<IdeaCard> cards;
  for (const auto& c : cards_json.at("cards")) cards.push_back(IdeaCard::from_json(c));
  if (cards.empty()) throw FatalError("idea proposal produced no usable idea cards");

  std::set<int> rejected(ctx_.config.idea_reject_indices.begin(),
                         ctx_.config.idea_reject_indices.end());

  auto resolve = [&](IdeaCard& card) {
    json resolved = ctx_.once("idea/novelty/" + card.id, "IdeaCommitted", [&] {
      IdeaCard r = retry_transient(ctx_, "novelty resolution", [&] {
        return engine.resolve_novelty(card, ctx_.config.idea_max_refinements);
      });
      return json{{"card", r.to_json()}};
    });
    card = IdeaCard::from_json(resolved.at("card"));
  };

  std::optional<IdeaCard> selected;
  if (ctx_.config.idea_select_index) {
    int idx = *ctx_.config.idea_select_index;
    if (idx < 1 || idx > static_cast<int>(cards.size()))
      throw FatalError("idea_select_index " + std::to_string(idx) + " is out of range");
    resolve(cards[idx - 1]);
    if (cards[idx - 1].novelty.kind != NoveltyKind::Distinct)
      throw FatalError("configured idea_select_index points at an idea that is not Distinct");
    selected = cards[idx - 1];
  } else {
    for (size_t i = 0; i < cards.size() && !selected; ++i) {
      if (rejected.count(static_cast<int>(i) + 1)) {
        ctx_.warn("idea " + cards[i].id + " skipped by the configured reject list");
        continue;
      }
      resolve(cards[i]);
      if (cards[i].novelty.kind == NoveltyKind::Distinct) selected = cards[i];
    }
  }

  ctx_.once("idea/selected", "IdeaCommitted", [&]() -> json {
    if (!selected) return json{{"id", ""}};
    return json{{"id", selected->id}, {"card", selected->to_json()}};
  });

  json all_cards = json::array();
  for (const auto& c : cards) all_cards.push_back(c.to_json());
  write_json_file(ctx_.ideas_dir() / "ideas.json",
                  json{{"limitations", lims_json.at("limitations")}, {"cards", all_cards}});
  write_json_file(ctx_.ideas_dir() / "selected.json",
                  selected ? selected->to_json() : json{{"id", nullptr}});

  if (!selected)
    ctx_.warn("no Distinct idea was found; the experiment phase will refuse to start");
}

// ---- experiment phase --------------------------------------------------------------

void Controller::run_experiment_phase() {
  auto selected = ctx_.memo("idea/selected");
  if (!selected || selected->value("id", "").empty())
    throw FatalError("no selected idea; run the idea phase and ensure one idea is Distinct");
  IdeaCard idea = IdeaCard::from_json(selected->at("card"));

  ExperimentEngine engine(ctx_, *runner_);
  BaselineResult baseline = engine.run_baseline();

  StageOutcome s1 = engine.run_stage1(idea);
  if (!s1.carried)
    throw FatalError("stage 1 exhausted " + std::to_string(s1.iterations_used) +
                     " iterations without a NonBuggy node");

  StageOutcome s2 = engine.run_stage2(s1.node_id, baseline);
  if (!s2.carried)
    throw FatalError("stage 2 exhausted " + std::to_string(s2.trials_run) +
                     " trials without surpassing the baseline");

  auto description = engine.describe_method(s2.node_id);
  if (!description)
    throw FatalError("method description failed twice; stage 3 and writing depend on it");

  StageOutcome s3 = engine.run_stage3(s2.node_id, *description);
  if (!s3.carried) ctx_.warn("stage 3 finished without a single completed ablation result");
}

// ---- write phase ----------------------------------------------------------------------

void Controller::run_write_phase() {
  auto s2_memo = ctx_.memo("exp/stage2/outcome");
  auto describe_memo = ctx_.memo("exp/describe");
  auto selected = ctx_.memo("idea/selected");
  if (!s2_memo || !describe_memo || !selected)
    throw FatalError("write phase requires a completed experiment phase");

  StageOutcome s2 = StageOutcome::from_json(*s2_memo);
  std::string method_description = describe_memo->value("text", "");
  IdeaCard idea = IdeaCard::from_json(selected->at("card"));
  std::string title = idea.title;
  fs::path stage2_ws = ctx_.nodes_dir() / s2.node_id / "workspace";

  WritingEngine engine(ctx_);
  fs::path verified_path = ctx_.writing_dir() / "verified.bib";

  ctx_.once("write/setup", "StepCommitted", [&]() -> json {
    if (fs::exists(ctx_.paper_dir() / "template"))
      copy_tree(ctx_.paper_dir() / "template", ctx_.writing_dir() / "template");
    quarantine_stray_bibs(ctx_.writing_dir(), verified_path, ctx_.warn);
    return json::object();
  });

  ctx_.once("write/bib_seed", "StepCommitted", [&]() -> json {
    fs::path bib_file = find_bib_file(ctx_.paper_dir());
    if (bib_file.empty()) throw FatalError("no baseline bibliography under paper/");
    BibEntry self;
    self.key = ctx_.config.baseline_bib_key;
    self.entry_type = "article";
    self.fields["title"] = ctx_.config.baseline_title;
    self.fields["author"] = ctx_.config.baseline_authors;
    self.fields["year"] = ctx_.config.baseline_year;
    if (!ctx_.config.baseline_venue.empty())
      self.fields["journal"] = ctx_.config.baseline_venue;
    self.provenance = BibProvenance::BaselineSelf;
    auto bib =
        VerifiedBibliography::seed_from_baseline(bib_file, self, verified_path, ctx_.warn);
    return json{{"entries", bib.entries().size()}};
  });
  VerifiedBibliography bib = VerifiedBibliography::load(verified_path, ctx_.warn);

  ctx_.once("write/bib_collect", "StepCommitted", [&]() -> json {
    std::vector<std::string> queries{title};
    if (auto lims = ctx_.memo("idea/limitations"))
      for (const auto& l : lims->at("limitations"))
        queries.push_back(l.value("statement", ""));
    if (static_cast<int>(queries.size()) > ctx_.config.bib_query_budget)
      queries.resize(ctx_.config.bib_query_budget);
    json added = json::array();
    for (const auto& q : queries) {
      if (trim(q).empty()) continue;
      try {
        if (auto entry = fetch_entry(q, *ctx_.search, ctx_.warn)) {
          if (bib.verify_and_add(*entry)) added.push_back(entry->key);
        }
      } catch (const ConflictError& e) {
        ctx_.warn(std::string("bibliography conflict needs manual resolution: ") + e.what());
      } catch (const TransientError& e) {
        ctx_.warn(std::string("bibliography lookup failed: ") + e.what());
      }
    }
    return json{{"added", added}};
  });
  bib = VerifiedBibliography::load(verified_path, ctx_.warn);

  ctx_.once("write/tables", "StepCommitted", [&]() -> json {
    json files = json::array();
    for (const char* name : {"component_ablation_summary", "hyperparam_ablation_summary"}) {
      fs::path src = ctx_.summaries_dir() / (std::string(name) + ".json");
      std::string body = WritingEngine::summaries_to_tables(read_json_file(src));
      fs::path out = ctx_.writing_dir() / (std::string(name) + "_table.tex");
      write_file(out, "% source: " + ctx_.rel(src) + "\n" + body);
      files.push_back(ctx_.rel(out));
    }
    return json{{"files", files}};
  });

  json bundle_json = ctx_.once("write/resources", "StepCommitted", [&] {
    return engine.assemble_resources(stage2_ws, method_description).to_json(run_dir_);
  });
  ResourceBundle bundle = ResourceBundle::from_json(bundle_json, run_dir_);

  json method_json = ctx_.once("write/method", "StepCommitted", [&] {
    std::vector<std::string> flags;
    std::string text = engine.write_method_section(bundle, flags);
    return json{{"text", text}, {"flags", flags}};
  });

  json outline_json = ctx_.once("write/outline", "StepCommitted", [&] {
    auto outline = engine.outline_structure(bundle, method_json.value("text", ""));
    json arr = json::array();
    for (const auto& [name, summary] : outline)
      arr.push_back({{"name", name}, {"summary", summary}});
    return json{{"outline", arr}};
  });
  std::vector<std::pair<std::string, std::string>> outline;
  for (const auto& o : outline_json.at("outline"))
    outline.emplace_back(o.value("name", ""), o.value("summary", ""));

  json draft_json = ctx_.once("write/draft", "RevisionCommitted", [&] {
    ManuscriptState ms = engine.write_full_draft(bundle, outline,
                                                 method_json.value("text", ""), bib.keys());
    for (const auto& f : method_json.value("flags", std::vector<std::string>{}))
      ms.flags.push_back(f);
    return json{{"cause", "Draft"}, {"manuscript", ms.to_json()}};
  });
  ManuscriptState ms = ManuscriptState::from_json(draft_json.at("manuscript"));

  json related_json = ctx_.once("write/related", "RevisionCommitted", [&] {
    ManuscriptState next = engine.rewrite_related_work(ms, bundle, bib.keys());
    return json{{"cause", "RelatedWorkRewrite"}, {"manuscript", next.to_json()}};
  });
  ms = ManuscriptState::from_json(related_json.at("manuscript"));

  json citations_json = ctx_.once("write/citations", "RevisionCommitted", [&] {
    auto [report, next] = engine.validate_citations(ms, bib, bundle);
    return json{{"cause", "CitationFix"}, {"report", report}, {"manuscript", next.to_json()}};
  });
  ms = ManuscriptState::from_json(citations_json.at("manuscript"));
  bib = VerifiedBibliography::load(verified_path, ctx_.warn);  // lookups may have added keys

  const FeedbackKind kinds[] = {FeedbackKind::LogicalConsistency, FeedbackKind::Formatting,
                                FeedbackKind::Figures, FeedbackKind::AIReview};
  auto reflect_once = [&](FeedbackKind kind, int round) {
    std::string key = "write/reflect/r" + std::to_string(round) + "/" + to_string(kind);
    json data = ctx_.once(key, "RevisionCommitted", [&] {
      int before = ms.revision;
      FeedbackItem feedback;
      ManuscriptState next = engine.reflect(ms, kind, round, bundle, bib.keys(), &feedback);
      return json{{"cause", "Reflection"},
                  {"kind", to_string(kind)},
                  {"round", round},
                  {"applied", next.revision > before},
                  {"feedback", feedback.body},
                  {"manuscript", next.to_json()}};
    });
    ms = ManuscriptState::from_json(data.at("manuscript"));
  };
  if (ctx_.config.reflection_order == "blocked") {
    for (FeedbackKind kind : kinds)
      for (int round = 1; round <= ctx_.config.reflection_rounds; ++round)
        reflect_once(kind, round);
  } else {
    for (int round = 1; round <= ctx_.config.reflection_rounds; ++round)
      for (FeedbackKind kind : kinds) reflect_once(kind, round);
  }

  PageCounter* counter = nullptr;
  EstimatePageCounter estimate(ctx_.config.lines_per_page);
  CommandPageCounter compile(ctx_.config.compile_command);
  if (ctx_.config.compile_command.empty()) counter = &estimate;
  else counter = &compile;

  json length_json = ctx_.once("write/length", "RevisionCommitted", [&] {
    ManuscriptState next = engine.adjust_length(ms, ctx_.config.target_pages, *counter, title);
    return json{{"cause", "LengthAdjust"}, {"manuscript", next.to_json()}};
  });
  ms = ManuscriptState::from_json(length_json.at("manuscript"));

  // Citation closure is a hard gate before the final render.
  for (const auto& k : ms.cite_keys_used)
    if (!bib.contains(k))
      throw FatalError("citation closure violated before final render: unknown key '" + k +
                       "'");

  ctx_.once("write/final", "StepCommitted", [&]() -> json {
    quarantine_stray_bibs(ctx_.writing_dir(), verified_path, ctx_.warn);
    render_manuscript(ms, ctx_.config, title, ctx_.writing_dir());
    if (ctx_.config.compile_command.empty()) {
      write_stub_pdf(ctx_.writing_dir() / "paper.pdf", ms.page_count.value_or(1));
    } else {
      try {
        compile.count(ctx_.writing_dir(), "paper.tex");
      } catch (const Error& e) {
        ctx_.warn(std::string("final compile failed: ") + e.what());
      }
    }
    write_json_file(ctx_.writing_dir() / "manuscript.json", ms.to_json());
    return json{{"pages", ms.page_count.value_or(0)},
                {"estimated", ms.page_count_estimated},
                {"revision", ms.revision}};
  });
}

// ---- status & report --------------------------------------------------------------------

json Controller::status() const {
  json phases = json::object();
  for (const char* p : kPhases) {
    if (phase_complete(p)) phases[p] = "complete";
    else if (journal_->find("phase/" + std::string(p) + "/started")) phases[p] = "running";
    else phases[p] = "pending";
  }
  int trial_count = 0;
  for (const auto& ev : journal_->events())
    if (ev.type == "TrialCommitted") ++trial_count;
  json manifest = read_json_file(run_dir_ / "manifest.json");
  return json{{"run_id", manifest.value("run_id", "")},
              {"phases", phases},
              {"trials", trial_count},
              {"events", journal_->last_seq()}};
}

json Controller::generate_report() {
  bool any_complete = false;
  for (const char* p : kPhases) any_complete = any_complete || phase_complete(p);
  if (!any_complete)
    throw InputError("no phase is complete yet; nothing to report on");

  json report;
  json manifest = read_json_file(run_dir_ / "manifest.json");
  report["run_id"] = manifest.value("run_id", "");
  report["phases"] = status()["phases"];

  // Trials and their metrics, straight from the journal.
  json trials = json::array();
  for (const auto& ev : journal_->events()) {
    if (ev.type != "TrialCommitted") continue;
    TrialRecord rec = TrialRecord::from_json(ev.data);
    json t{{"id", rec.id},
           {"node", rec.node_id},
           {"index", rec.index},
           {"code_status", to_string(rec.classified.code)},
           {"plot_status", to_string(rec.classified.plot)},
           {"execution", rec.execution}};
    json mm = json::object();
    for (const auto& [name, v] : rec.metrics) mm[name] = v.text;
    t["metrics"] = mm;
    trials.push_back(t);
  }
  report["trials"] = trials;

  // Table provenance: every cell maps back to its summary source string.
  json tables = json::array();
  std::vector<fs::path> table_files;
  if (fs::is_directory(ctx_.writing_dir()))
    for (const auto& e : fs::directory_iterator(ctx_.writing_dir()))
      if (e.is_regular_file() && e.path().filename().generic_string().ends_with("_table.tex"))
        table_files.push_back(e.path());
  std::sort(table_files.begin(), table_files.end());
  for (const auto& tf : table_files) {
    std::string text = read_file(tf);
    json entry{{"table", ctx_.rel(tf)}};
    std::string source;
    for (const auto& line : split(text, '\n'))
      if (line.rfind("% source: ", 0) == 0) source = trim(line.substr(10));
    entry["source"] = source;
    json cells = json::array();
    if (!source.empty() && fs::exists(ctx_.abs(source))) {
      json summary = read_json_file(ctx_.abs(source));
      const json& settings = summary.value("settings", json::array());
      for (const auto& line : split(text, '\n')) {
        if (line.find(" & ") == std::string::npos || line.find("\\\\") == std::string::npos)
          continue;
        std::string row_line = line.substr(0, line.find("\\\\"));
        auto cols = split(row_line, '&');
        for (auto& c : cols) c = trim(c);
        if (cols.empty() || cols[0] == "Setting") continue;
        // locate the summary row by name
        int row_idx = -1;
        for (size_t i = 0; i < settings.size(); ++i)
          if (settings[i].value("name", "") == cols[0]) row_idx = static_cast<int>(i);
        if (row_idx < 0) continue;
        const json& metrics = settings[row_idx].at("metrics");
        for (const auto& [mname, mval] : metrics.items()) {
          std::string expect = mval.is_string() ? mval.get<std::string>() : mval.dump();
          bool found = std::find(cols.begin(), cols.end(), expect) != cols.end();
          cells.push_back({{"row", cols[0]},
                           {"column", mname},
                           {"value", expect},
                           {"source_path", source},
                           {"source_pointer",
                            "settings[" + std::to_string(row_idx) + "].metrics." + mname},
                           {"verified", found}});
        }
      }
    }
    entry["cells"] = cells;
    tables.push_back(entry);
  }
  report["tables"] = tables;

  // Figures map back to the trial (or baseline run) that produced them.
  json figures = json::array();
  if (fs::exists(ctx_.writing_dir() / "manuscript.json")) {
    json ms = read_json_file(ctx_.writing_dir() / "manuscript.json");
    for (const auto& f : ms.value("figures", json::array())) {
      std::string source = f.value("source", "");
      std::string producer = "";
      if (source.rfind("workspace/", 0) == 0) producer = "baseline";
      for (const auto& ev : journal_->events()) {
        if (ev.type != "TrialCommitted") continue;
        TrialRecord rec = TrialRecord::from_json(ev.data);
        fs::path exec_file = ctx_.abs(rec.execution);
        if (!fs::exists(exec_file)) continue;
        json exec = read_json_file(exec_file);
        std::string node_ws = "nodes/" + rec.node_id + "/workspace/";
        for (const auto& p : exec.value("plot_files", std::vector<std::string>{}))
          if (node_ws + p == source) producer = rec.id;
      }
      figures.push_back({{"path", f.value("path", "")},
                         {"source", source},
                         {"producer", producer},
                         {"placement", f.value("placement", "")}});
    }
  }
  report["figures"] = figures;

  write_json_file(ctx_.report_dir() / "report.json", report);

  std::ostringstream md;
  md << "# Run report\n\n";
  md << "Run: " << report["run_id"].get<std::string>() << "\n\n";
  md << "## Tables\n";
  for (const auto& t : report["tables"])
    md << "- " << t.value("table", "") << " <- " << t.value("source", "") << " ("
       << t.value("cells", json::array()).size() << " cells)\n";
  md << "\n## Figures\n";
  for (const auto& f : report["figures"])
    md << "- " << f.value("path", "") << " <- " << f.value("source", "") << " (producer: "
       << f.value("producer", "") << ")\n";
  md << "\n## Trials\n";
  for (const auto& t : report["trials"])
    md << "- " << t.value("id", "") << " node " << t.value("node", "") << " "
       << t.value("code_status", "") << "/" << t.value("plot_status", "") << "\n";
  write_file(ctx_.report_dir() / "report.md", md.str());

  index_artifacts();
  return report;
}

}  // namespace labpilot
