#pragma once

#include "labpilot/bib.hpp"
#include "labpilot/context.hpp"
#include "labpilot/core.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace labpilot {

// Mandatory clause embedded verbatim in every drafting and reflection prompt,
// together with the structured result summaries it refers to.
inline constexpr const char* kNoFabricationClause =
    "If a feedback requests a new experiment, a comparison with data you do not have, or an "
    "analysis that is impossible with the provided information, DO NOT INVENT DATA OR "
    "RESULTS.";

enum class FeedbackKind { LogicalConsistency, Formatting, Figures, AIReview };
enum class RevisionCause { Draft, RelatedWorkRewrite, CitationFix, Reflection, LengthAdjust };
enum class FigurePlacement { Main, Appendix, Removed };

const char* to_string(FeedbackKind k);
const char* to_string(RevisionCause c);
const char* to_string(FigurePlacement p);
std::optional<FeedbackKind> feedback_kind_from(const std::string& s);
std::optional<FigurePlacement> placement_from(const std::string& s);

struct FeedbackItem {
  FeedbackKind kind = FeedbackKind::LogicalConsistency;
  std::string body;
  int round = 0;
};

struct FigureEntry {
  std::string path;    // writing-dir-relative (figures/...)
  std::string source;  // run-dir-relative provenance (the producing artifact)
  std::string caption;
  FigurePlacement placement = FigurePlacement::Main;
};

struct LineageEntry {
  int revision = 0;
  RevisionCause cause = RevisionCause::Draft;
  std::optional<FeedbackKind> kind;  // set for Reflection entries
};

struct StructuredReview {
  std::string summary;
  std::string strengths;
  std::string weaknesses;
  std::map<std::string, double> scores;  // soundness, presentation, contribution, rating

  nlohmann::json to_json() const;
};

struct ManuscriptState {
  std::vector<std::pair<std::string, std::string>> sections;  // ordered
  std::vector<FigureEntry> figures;
  std::set<std::string> cite_keys_used;
  std::optional<int> page_count;  // set only after a counting pass
  bool page_count_estimated = false;
  int revision = 0;
  std::vector<LineageEntry> lineage;  // append-only
  std::vector<std::string> flags;

  const std::string* section(const std::string& name) const;
  void set_section(const std::string& name, std::string text);
  // All section text plus figure captions, for citation scanning.
  std::string full_source() const;
  // Revision bump: lineage entry appended, citation keys recomputed.
  void commit(RevisionCause cause, std::optional<FeedbackKind> kind = std::nullopt);

  nlohmann::json to_json() const;
  static ManuscriptState from_json(const nlohmann::json& j);
};

struct ResourceBundle {
  fs::path template_dir;
  fs::path instruction_doc;
  std::vector<fs::path> baseline_latex;
  std::optional<fs::path> baseline_pdf;
  std::vector<fs::path> stage2_code;
  std::map<std::string, fs::path> summaries;  // stem -> path, the four stage summaries
  std::vector<fs::path> ablation_tables;
  std::string method_description;

  // Paths are serialized relative to `base` (the run directory) so journaled
  // units stay portable across run locations.
  nlohmann::json to_json(const fs::path& base = {}) const;
  static ResourceBundle from_json(const nlohmann::json& j, const fs::path& base = {});
};

// ---- page counting ------------------------------------------------------------

struct PageCount {
  int pages = 1;
  bool estimated = false;
};

class PageCounter {
public:
  virtual ~PageCounter() = default;
  // `dir` holds the rendered main_file and its includes.
  virtual PageCount count(const fs::path& dir, const std::string& main_file) = 0;
};

// Calibrated lines-per-page fallback; always flagged as an estimate.
class EstimatePageCounter : public PageCounter {
public:
  explicit EstimatePageCounter(int lines_per_page) : lines_per_page_(lines_per_page) {}
  PageCount count(const fs::path& dir, const std::string& main_file) override;

private:
  int lines_per_page_;
};

// Invokes the configured document compiler and reads the page total from its
// log; failures surface as TransientError so callers can fall back.
class CommandPageCounter : public PageCounter {
public:
  explicit CommandPageCounter(std::string command) : command_(std::move(command)) {}
  PageCount count(const fs::path& dir, const std::string& main_file) override;

private:
  std::string command_;
};

// Writes sections/, figure include blocks, and paper.tex under writing_dir.
// Returns the main file name.
std::string render_manuscript(const ManuscriptState& ms, const RunConfig& config,
                              const std::string& title, const fs::path& writing_dir);

// Minimal placeholder PDF with `pages` empty pages, for stubbed compiles.
void write_stub_pdf(const fs::path& path, int pages);

// Replaces (new_key set) or strips (nullopt) a citation key everywhere in
// `latex`; citation commands left with no keys are removed outright.
std::string replace_cite_key(const std::string& latex, const std::string& old_key,
                             const std::optional<std::string>& new_key);

// Body of a \section-like block (case-insensitive name match), or nullopt.
std::optional<std::string> extract_latex_section(const std::string& latex,
                                                 const std::string& name);

// ---- engine ---------------------------------------------------------------------

class WritingEngine {
public:
  explicit WritingEngine(RunContext& ctx);

  // One table body per summary; every metric cell is the source string,
  // byte for byte. Throws InputError on schema violations.
  static std::string summaries_to_tables(const nlohmann::json& summary);

  // Validates the five resource classes; missing mandatory pieces are fatal
  // and named, a missing baseline PDF is only a warning.
  ResourceBundle assemble_resources(const fs::path& stage2_workspace,
                                    const std::string& method_description) const;

  // Baseline preview + proposed method, grounded in the implementation:
  // the text must mention at least one identifier from the Stage 2 code
  // (one retry, then flagged).
  std::string write_method_section(const ResourceBundle& bundle,
                                   std::vector<std::string>& flags);

  // Section-by-section outline covering the configured section list exactly
  // (order enforced); one retry on gaps.
  std::vector<std::pair<std::string, std::string>> outline_structure(
      const ResourceBundle& bundle, const std::string& method_section);

  // Full draft; the prepared method section is inserted unchanged.
  ManuscriptState write_full_draft(const ResourceBundle& bundle,
                                   const std::vector<std::pair<std::string, std::string>>& outline,
                                   const std::string& method_section,
                                   const std::set<std::string>& citable_keys);

  // Guided by the baseline's related-work section; skipped with a warning
  // when the baseline has none.
  ManuscriptState rewrite_related_work(ManuscriptState ms, const ResourceBundle& bundle,
                                       const std::set<std::string>& citable_keys);

  // Removes or replaces unknown keys, suggests baseline-cited keys missing
  // from the draft, and enforces closure against the verified bibliography.
  std::pair<nlohmann::json, ManuscriptState> validate_citations(ManuscriptState ms,
                                                                VerifiedBibliography& bib,
                                                                const ResourceBundle& bundle);

  PromptBundle build_reflection_prompt(FeedbackKind kind, const ManuscriptState& ms,
                                       const ResourceBundle& bundle) const;

  // Feedback generation plus application; backend failures skip the round
  // with a warning and leave the manuscript untouched.
  ManuscriptState reflect(ManuscriptState ms, FeedbackKind kind, int round,
                          const ResourceBundle& bundle, const std::set<std::string>& citable_keys,
                          FeedbackItem* out_feedback = nullptr);

  StructuredReview generate_review(const ManuscriptState& ms);

  // Renders and counts; compile failures fall back to the line estimate
  // (flagged). Returns the count it stored on the manuscript.
  int count_pages(ManuscriptState& ms, PageCounter& counter, const std::string& title);

  // Gradual trim loop until within one page of the target; page counts never
  // increase while over target, and non-convergence is flagged.
  ManuscriptState adjust_length(ManuscriptState ms, int target_pages, PageCounter& counter,
                                const std::string& title);

private:
  std::vector<FigureEntry> collect_figures(const ResourceBundle& bundle) const;
  nlohmann::json apply_sections_payload(ManuscriptState& ms, const nlohmann::json& payload,
                                        bool allow_figures) const;

  RunContext& ctx_;
};

}  // namespace labpilot
