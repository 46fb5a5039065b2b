#include "labpilot/demo.hpp"

#include "labpilot/errors.hpp"
#include "labpilot/json_util.hpp"

#include <algorithm>
#include <sstream>

namespace labpilot {

using nlohmann::json;

namespace {

const PromptAttachment* find_attachment(const PromptBundle& prompt, const std::string& name) {
  for (const auto& a : prompt.attachments)
    if (a.name == name) return &a;
  return nullptr;
}

int int_before(const std::string& text, const std::string& marker, int fallback) {
  size_t pos = text.find(marker);
  if (pos == std::string::npos) return fallback;
  size_t end = pos;
  while (end > 0 && text[end - 1] == ' ') --end;
  size_t start = end;
  while (start > 0 && std::isdigit(static_cast<unsigned char>(text[start - 1]))) --start;
  if (start == end) return fallback;
  return std::atoi(text.substr(start, end - start).c_str());
}

int int_after(const std::string& text, const std::string& marker, int fallback) {
  size_t pos = text.find(marker);
  if (pos == std::string::npos) return fallback;
  pos += marker.size();
  size_t end = pos;
  while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
  if (end == pos) return fallback;
  return std::atoi(text.substr(pos, end - pos).c_str());
}

std::string between(const std::string& text, const std::string& a, const std::string& b) {
  size_t start = text.find(a);
  if (start == std::string::npos) return "";
  start += a.size();
  size_t end = text.find(b, start);
  if (end == std::string::npos) return "";
  return text.substr(start, end - start);
}

// Sentences usable as verbatim evidence quotes.
std::vector<std::string> long_sentences(const std::string& text, size_t want) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i < text.size() && out.size() < want; ++i) {
    if (text[i] == '.') {
      std::string sentence = text.substr(start, i - start + 1);
      if (trim(sentence).size() > 40 && sentence.find('\n') == std::string::npos)
        out.push_back(sentence);
      start = i + 1;
    }
    if (text[i] == '\n') start = i + 1;
  }
  return out;
}

std::string first_code_identifier(const std::string& code) {
  std::string token;
  for (size_t i = 0; i <= code.size(); ++i) {
    char c = i < code.size() ? code[i] : ' ';
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      token += c;
      continue;
    }
    if (token.size() >= 8 && token.find('_') != std::string::npos) return token;
    token.clear();
  }
  return "the improved scoring routine";
}

std::string filler_block(const std::string& topic, int lines) {
  std::ostringstream out;
  for (int i = 1; i <= lines; ++i)
    out << "Additional analysis of " << topic << " (case " << i
        << ") confirms the reported trend; the effect size stays within the observed band "
           "and the ranking of settings is unchanged.\n";
  return out.str();
}

std::string demo_draft_section(const std::string& name, const std::vector<std::string>& keys,
                               const json& figures) {
  auto key = [&](size_t i) { return keys.empty() ? std::string("missing") : keys[i % keys.size()]; };
  std::ostringstream out;
  if (name == "Abstract") {
    out << "We revisit the baseline detector and introduce a margin-weighted rescaling of "
           "its per-sample scores. Across the prepared evaluation suite the improved "
           "method surpasses the baseline on the primary metric, and ablations isolate "
           "where the gain comes from.\n";
  } else if (name == "Introduction") {
    out << "Reliable detection under distribution shift remains brittle when scores are "
           "used uncalibrated \\citep{" << key(0) << "}. We build directly on the baseline "
           "implementation and improve it without retraining \\citep{unverified2099note}.\n"
        << filler_block("the motivating setting", 110);
  } else if (name == "Related Work") {
    out << "Score calibration has a long line of prior work \\citep{" << key(0) << "}. Our "
           "approach differs by reweighting scores with a margin estimate computed per "
           "sample rather than per batch.\n"
        << filler_block("adjacent approaches", 50);
  } else if (name == "Experiments") {
    out << "We evaluate against the baseline using the prepared entry points and report "
           "the primary metric from the structured summaries. The improved method "
           "surpasses the baseline, as shown in the generated tables.\n\n"
           "\\input{hyperparam_ablation_summary_table}\n\n"
           "\\input{component_ablation_summary_table}\n\n";
    for (const auto& f : figures) out << "% figure: " << f.value("path", "") << "\n";
    out << filler_block("individual evaluation settings", 180);
  } else if (name == "Conclusion") {
    out << "Margin-weighted rescaling is a small, reproducible improvement over the "
           "baseline \\citep{" << key(1) << "}. Its gains persist across the ablation grid.\n"
        << filler_block("takeaways", 30);
  } else if (name == "Appendix") {
    out << "Extended tables and per-setting traces.\n" << filler_block("appendix material", 110);
  } else {
    out << "Placeholder for " << name << ".\n";
  }
  return out.str();
}

}  // namespace

// ---- text backend -----------------------------------------------------------------

std::string DemoTextBackend::complete_text(const PromptBundle& prompt) {
  prompt.validate();
  const std::string& body = prompt.body;

  if (body.find("output the limitations") != std::string::npos) {
    const auto* paper = find_attachment(prompt, "baseline_paper");
    json arr = json::array();
    if (paper) {
      auto evidence = long_sentences(paper->text, 3);
      for (size_t i = 0; i < evidence.size(); ++i)
        arr.push_back({{"statement", "The baseline leaves aspect " + std::to_string(i + 1) +
                                         " unaddressed, as its own discussion concedes."},
                       {"evidence", evidence[i]}});
    }
    return arr.dump(2);
  }

  if (body.find("research ideas") != std::string::npos && body.find("Propose") != std::string::npos) {
    int n = int_after(body, "Propose up to ", 10);
    std::vector<std::string> lim_ids;
    if (const auto* lims = find_attachment(prompt, "limitations")) {
      json lim_json = json::parse(lims->text, nullptr, false);
      if (lim_json.is_array())
        for (const auto& l : lim_json) lim_ids.push_back(l.value("id", ""));
    }
    json arr = json::array();
    for (int i = 1; i <= n; ++i) {
      json idea{{"title", "Margin-weighted score rescaling, variant " + std::to_string(i)},
                {"description",
                 "Rescale the per-sample detection scores by an estimated decision margin "
                 "before thresholding (variant " + std::to_string(i) +
                     "), leaving training untouched."}};
      json lims_ref = json::array();
      if (!lim_ids.empty()) lims_ref.push_back(lim_ids[(i - 1) % lim_ids.size()]);
      idea["limitations"] = lims_ref;
      arr.push_back(idea);
    }
    return arr.dump(2);
  }

  if (body.find("conceptually similar") != std::string::npos) return "[]";

  if (body.find("Rewrite its description") != std::string::npos) {
    const auto* idea = find_attachment(prompt, "idea");
    std::string desc;
    if (idea) {
      json j = json::parse(idea->text, nullptr, false);
      if (j.is_object()) desc = j.value("description", "");
    }
    return desc + " Unlike the retrieved prior work, the margin estimate is computed per "
                  "sample at inference time.";
  }

  if (body.find("propose ablation studies") != std::string::npos) {
    int want_h = int_before(body, " hyperparameter ablations", 4);
    int want_c = int_before(body, " component-level ablations", 4);
    json h = json::array(), c = json::array();
    for (int i = 1; i <= want_h; ++i)
      h.push_back("Vary the margin smoothing coefficient, sweep " + std::to_string(i));
    for (int i = 1; i <= want_c; ++i)
      c.push_back("Disable rescaling component " + std::to_string(i) +
                  " and measure the impact");
    return json{{"hyperparameter", h}, {"component", c}}.dump(2);
  }

  if (body.find("Write the Method section") != std::string::npos) {
    const auto* code = find_attachment(prompt, "stage2_code");
    std::string ident = code ? first_code_identifier(code->text) : "the improved scoring routine";
    std::ostringstream out;
    out << "The baseline computes a detection score per sample and thresholds it directly; "
           "its pipeline is reproduced unchanged as the reference point.\n\n"
        << "Our method wraps that score in a margin-weighted rescaling step, implemented as "
        << ident << " in the improved entry file. The weight is derived from the gap "
           "between the top two candidate assignments, so confident samples are left "
           "nearly untouched while ambiguous ones are damped.\n\n"
        << filler_block("the method's behavior", 25);
    return out.str();
  }

  if (body.find("planned paper structure") != std::string::npos) {
    std::string list = between(body, "Cover exactly these sections: ", ".");
    json outline = json::object();
    for (const auto& name : split_list(list))
      outline[name] = "This section presents " + to_lower(name) +
                      " content grounded in the structured summaries.";
    return outline.dump(2);
  }

  if (body.find("Write the full paper draft") != std::string::npos) {
    std::string list = between(body, "covering exactly these sections: ", ".");
    std::vector<std::string> keys;
    if (const auto* k = find_attachment(prompt, "verified_bibliography_keys"))
      for (const auto& line : split(k->text, '\n'))
        if (!trim(line).empty()) keys.push_back(trim(line));
    json figures = json::array();
    if (const auto* f = find_attachment(prompt, "figure_registry")) {
      json parsed = json::parse(f->text, nullptr, false);
      if (parsed.is_array()) figures = parsed;
    }
    json sections = json::object();
    for (const auto& name : split_list(list))
      sections[name] = demo_draft_section(name, keys, figures);
    return json{{"sections", sections}}.dump(2);
  }

  if (body.find("Rewrite the Related Work section") != std::string::npos) {
    const auto* current = find_attachment(prompt, "current_related_work");
    return (current ? current->text : "") +
           "\nFollowing the field coverage of the baseline's survey, we position margin "
           "weighting as an inference-time alternative to batch-level calibration.";
  }

  if (body.find("Revise the Related Work section to cite them") != std::string::npos) {
    const auto* current = find_attachment(prompt, "current_related_work");
    std::string missing = between(body, "but the draft does not: ", ". Revise");
    auto keys = split_list(missing);
    return (current ? current->text : "") + "\nEarlier studies \\citep{" + join(keys, ",") +
           "} laid the groundwork this comparison builds on.";
  }

  if (body.find("Review the manuscript in the official NeurIPS review format") !=
      std::string::npos) {
    return json{{"summary", "A focused inference-time improvement over a prepared baseline."},
                {"strengths", "Clear grounding in the implementation; ablations are systematic."},
                {"weaknesses",
                 "Improvement is incremental and comparisons beyond the baseline are absent."},
                {"scores",
                 {{"soundness", 3}, {"presentation", 3}, {"contribution", 2}, {"rating", 5}}}}
        .dump(2);
  }

  if (body.find("Apply the round-") != std::string::npos) {
    int round = int_after(body, "Apply the round-", 1);
    if (body.find("plus \"figures\"") != std::string::npos) {
      // Figures kind: honor the feedback's move-to-appendix suggestion.
      json figures = json::array();
      if (const auto* fb = find_attachment(prompt, "feedback")) {
        size_t pos = fb->text.find("figures/");
        if (pos != std::string::npos) {
          size_t end = pos;
          while (end < fb->text.size() && !std::isspace(static_cast<unsigned char>(fb->text[end])))
            ++end;
          std::string path = fb->text.substr(pos, end - pos);
          figures.push_back({{"path", path}, {"placement", "Appendix"}});
        }
      }
      return json{{"sections", json::object()}, {"figures", figures}}.dump(2);
    }
    std::string conclusion;
    if (const auto* secs = find_attachment(prompt, "manuscript_sections")) {
      json j = json::parse(secs->text, nullptr, false);
      if (j.is_object() && j.contains("Conclusion")) conclusion = j.at("Conclusion");
    }
    conclusion += "\nClarified after round " + std::to_string(round) + " feedback.";
    return json{{"sections", {{"Conclusion", conclusion}}}}.dump(2);
  }

  if (body.find("feedback on logical consistency") != std::string::npos ||
      body.find("Generate specific, actionable feedback") != std::string::npos)
    return "Feedback: tie every quantitative claim to a summary row; the conclusion should "
           "restate the primary-metric gain explicitly.";

  if (body.find("formatting and presentation") != std::string::npos)
    return "Feedback: no blocking syntax issues found; merge one-sentence paragraphs into "
           "their neighbors.";

  if (body.find("informativeness") != std::string::npos) {
    std::string path;
    if (const auto* caps = find_attachment(prompt, "figure_captions")) {
      json j = json::parse(caps->text, nullptr, false);
      if (j.is_array() && j.size() >= 2) path = j.at(1).value("path", "");
    }
    if (path.empty()) return "Feedback: all figures carry their weight; keep them in the main text.";
    return "Feedback: the figure " + path +
           " adds little beyond the table; move it to the appendix.";
  }

  if (body.find("one bounded reduction step") != std::string::npos) {
    const auto* secs = find_attachment(prompt, "manuscript_sections");
    if (!secs) return json{{"sections", json::object()}}.dump();
    json j = json::parse(secs->text, nullptr, false);
    std::string longest;
    size_t longest_lines = 0;
    for (const auto& [name, text] : j.items()) {
      size_t lines = split(text.get<std::string>(), '\n').size();
      if (lines > longest_lines) {
        longest_lines = lines;
        longest = name;
      }
    }
    if (longest.empty()) return json{{"sections", json::object()}}.dump();
    auto lines = split(j.at(longest).get<std::string>(), '\n');
    size_t keep = lines.size() > 70 ? lines.size() - 60 : std::min<size_t>(lines.size(), 10);
    lines.resize(keep);
    return json{{"sections", {{longest, join(lines, "\n")}}}}.dump();
  }

  throw TestConfigError("demo text backend has no handler for prompt: " +
                        body.substr(0, 80));
}

// ---- coding agent ------------------------------------------------------------------

DemoCodingAgent::DemoCodingAgent(RunConfig config)
    : config_(std::move(config)),
      inner_([this](const PromptBundle& p, const AgentPolicy& pol) { return script_for(p, pol); }) {}

std::unique_ptr<AgentSession> DemoCodingAgent::start_session(const PromptBundle& prompt,
                                                             const AgentPolicy& policy) {
  return inner_.start_session(prompt, policy);
}

namespace {

int node_ordinal(const fs::path& workspace) {
  for (const auto& part : workspace) {
    std::string s = part.generic_string();
    if (s.rfind("node-", 0) == 0) return std::atoi(s.c_str() + 5);
  }
  return 0;
}

std::string metrics_script(const std::string& auroc, const std::string& note) {
  return "#!/bin/sh\n"
         "mkdir -p results figures\n"
         "cat > results/metrics.json <<'EOF'\n"
         "{\"auroc\": \"" + auroc + "\", \"fpr95\": \"31.5\"}\n"
         "EOF\n"
         "echo \"" + note + "\"\n";
}

std::string failing_script() {
  return "#!/bin/sh\n"
         "echo \"simulated implementation defect: missing reshape before scoring\" 1>&2\n"
         "exit 1\n";
}

std::string ablation_script(const std::string& description) {
  return "#!/bin/sh\n"
         "mkdir -p results figures\n"
         "cat > results/ablation.json <<'EOF'\n"
         "{\"settings\": ["
         "{\"name\": \"" + description + " (low)\", \"params\": {\"scale\": \"0.1\"}, "
         "\"metrics\": {\"auroc\": \"89.8\"}}, "
         "{\"name\": \"" + description + " (high)\", \"params\": {\"scale\": \"0.3\"}, "
         "\"metrics\": {\"auroc\": \"90.3\"}}]}\n"
         "EOF\n"
         "echo \"ablation sweep complete\"\n";
}

SessionScript three_turn_session(const std::string& note, const std::string& file,
                                 const std::string& content) {
  SessionScript script;
  AgentTurn look;
  look.command = "ls";
  look.note = note;
  script.turns.push_back(look);
  AgentTurn write;
  write.writes.push_back({file, content});
  script.turns.push_back(write);
  AgentTurn done;
  done.complete = true;
  script.turns.push_back(done);
  return script;
}

}  // namespace

SessionScript DemoCodingAgent::script_for(const PromptBundle& prompt,
                                          const AgentPolicy& policy) const {
  switch (prompt.role) {
    case PromptRole::Implement: {
      int ordinal = node_ordinal(policy.workspace_root);
      bool succeed = ordinal % 4 == 2;  // one node per wave lands a working script
      return three_turn_session("implementing the proposed idea",
                                config_.stage1_entry,
                                succeed ? metrics_script("90.2", "proposed method complete")
                                        : failing_script());
    }
    case PromptRole::Debug:
      return three_turn_session("fixing the reported defect", config_.stage1_entry,
                                metrics_script("90.1", "debugged method complete"));
    case PromptRole::Improve: {
      int trial = int_after(prompt.body, "Stage 2 trial ", 1);
      std::string auroc = trial <= 1 ? "89.6" : trial == 2 ? "90.0" : "90.9";
      std::string content =
          "#!/bin/sh\n"
          "# improved_score_margin: rescale per-sample scores by the decision margin\n" +
          metrics_script(auroc, "improved method complete").substr(10);
      return three_turn_session("applying one improvement", config_.stage2_entry, content);
    }
    case PromptRole::AblationImplement: {
      std::string entry = trim(between(prompt.body, "entry file named ", " ("));
      if (entry.empty()) entry = config_.hyperparam_entry;
      std::string desc = "ablation setting";
      if (const auto* a = find_attachment(prompt, "ablation_idea")) {
        json j = json::parse(a->text, nullptr, false);
        if (j.is_object()) desc = j.value("description", desc);
      }
      return three_turn_session("implementing the ablation", entry, ablation_script(desc));
    }
    case PromptRole::Write: {
      std::string entry = trim(between(prompt.body, "implemented in ", ". Write"));
      if (entry.empty()) entry = config_.stage2_entry;
      std::string description =
          "# Method description\n\nThe improved method in " + entry +
          " rescales each per-sample detection score by a margin weight computed from the "
          "gap between the top two candidate assignments. Confident samples keep their "
          "score; ambiguous samples are damped before thresholding. The change is "
          "inference-only and reuses the baseline's data loading unchanged.\n";
      return three_turn_session("describing the method", "method_description.md", description);
    }
    default:
      return SessionScript::never_completes();
  }
}

// ---- literature index ----------------------------------------------------------------

std::vector<PaperHit> DemoSearchBackend::search(const std::string& query, int limit) {
  (void)query;
  std::vector<PaperHit> hits;
  PaperHit a;
  a.title = "A Survey of Score Calibration for Distribution Shift";
  a.abstract_text = "We catalogue calibration strategies for detection scores under shift, "
                    "including temperature scaling and batch-level normalization.";
  a.venue = "TMLR";
  a.year = "2021";
  a.authors = {"R. Calder", "M. Ito"};
  a.external_id = "10.0000/demo.1";
  hits.push_back(a);
  PaperHit b;
  b.title = "Margin-Aware Confidence Estimation at Scale";
  b.abstract_text = "Margin statistics predict confidence reliability across large "
                    "evaluation suites.";
  b.venue = "ICML";
  b.year = "2022";
  b.authors = {"P. Novak"};
  hits.push_back(b);
  if (limit >= 0 && static_cast<int>(hits.size()) > limit) hits.resize(limit);
  return hits;
}

// ---- sample project -------------------------------------------------------------------

void write_demo_baseline(const fs::path& dir) {
  fs::create_directories(dir / "baseline");
  fs::create_directories(dir / "paper" / "template");

  write_file(dir / "baseline" / "baseline.py",
             "#!/bin/sh\n"
             "mkdir -p results\n"
             "cat > results/metrics.json <<'EOF'\n"
             "{\"auroc\": \"90.0\", \"fpr95\": \"34.2\"}\n"
             "EOF\n"
             "echo \"baseline evaluation complete\"\n");
  write_file(dir / "baseline" / "plot.py",
             "#!/bin/sh\n"
             "mkdir -p figures\n"
             "printf 'PNGSTUB demo visualization\\n' > figures/metrics_plot.png\n"
             "echo \"plot written\"\n");
  write_file(dir / "baseline" / "method.py",
             "# reference implementation of the baseline scoring path\n"
             "# (stand-in codebase file for the demo project)\n");

  write_file(dir / "paper" / "paper.md",
             "# Score Calibration for Robust Detection under Distribution Shift\n\n"
             "We study detection under distribution shift and propose a calibrated scoring "
             "rule evaluated on a standard suite. The method thresholds raw per-sample "
             "scores without any reweighting, which keeps inference simple and fast. "
             "However, the scoring rule treats confident and ambiguous samples identically, "
             "which leaves accuracy on the table near the decision boundary. The evaluation "
             "covers a single model family, so transfer to other architectures is untested "
             "in this work. Finally, the calibration constants are fitted globally, and the "
             "paper notes that per-sample adaptation is left to future work. We release the "
             "full implementation with baseline.py as the experimental entry point and "
             "plot.py for visualization.\n");

  write_file(dir / "paper" / "baseline.tex",
             "\\section{Introduction}\n"
             "Detection under shift with calibrated scores.\n"
             "\\section{Related Work}\n"
             "Calibration approaches are surveyed in \\citep{calder2020robust}; margin "
             "statistics were analyzed by \\citep{novak2019margins}.\n"
             "\\section{Method}\n"
             "Global calibration constants fitted on held-out data.\n");

  write_file(dir / "paper" / "refs.bib",
             "@article{calder2020robust,\n"
             "  title = {Robust Calibration of Detection Scores},\n"
             "  author = {Calder, R. and Ito, M.},\n"
             "  journal = {TMLR},\n"
             "  year = {2020},\n"
             "}\n\n"
             "@inproceedings{novak2019margins,\n"
             "  title = {Decision Margins as Confidence Signals},\n"
             "  author = {Novak, P.},\n"
             "  booktitle = {ICML},\n"
             "  year = {2019},\n"
             "}\n\n"
             "@article{ito2021shift,\n"
             "  title = {Benchmarking Detection under Distribution Shift},\n"
             "  author = {Ito, M.},\n"
             "  journal = {JMLR},\n"
             "  year = {2021},\n"
             "}\n");

  write_file(dir / "paper" / "writing_guidelines.md",
             "# Writing guidelines\n\n"
             "- Sections: Abstract, Introduction, Related Work, Method, Experiments, "
             "Conclusion, Appendix.\n"
             "- Every quantitative claim must come from the structured summaries.\n"
             "- Cite only keys from the verified bibliography.\n");

  write_file(dir / "paper" / "template" / "preamble.tex",
             "% demo conference template preamble\n"
             "\\usepackage{url}\n");

  write_file(dir / "config.cfg",
             "# demo run configuration\n"
             "rng_seed = 7\n"
             "run_command = sh\n"
             "script_timeout_s = 60\n"
             "backend_retry_base_ms = 10\n"
             "text_backend = demo\n"
             "agent_backend = demo\n"
             "search_backend = demo\n"
             "compile_command =\n"
             "lines_per_page = 50\n"
             "baseline_bib_key = demobaseline2023\n"
             "baseline_title = Score Calibration for Robust Detection under Distribution Shift\n"
             "baseline_authors = A. Researcher and B. Scholar\n"
             "baseline_year = 2023\n"
             "baseline_venue = Journal of Demonstrations\n");
}

}  // namespace labpilot
