#pragma once

#include "labpilot/agents.hpp"
#include "labpilot/search.hpp"
#include "labpilot/util.hpp"

#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

// A limitation of the baseline work, grounded by a verbatim quote.
struct Limitation {
  std::string id;
  std::string statement;
  std::string evidence;  // always a substring of the baseline paper text

  nlohmann::json to_json() const;
  static Limitation from_json(const nlohmann::json& j);
};

enum class NoveltyKind { Unchecked, Similar, Distinct, Rejected };

const char* to_string(NoveltyKind k);

struct NoveltyStatus {
  NoveltyKind kind = NoveltyKind::Unchecked;
  std::vector<std::string> similar_refs;  // non-empty iff kind == Similar
};

struct IdeaCard {
  std::string id;
  std::string title;
  std::string description;
  std::vector<std::string> limitations_addressed;
  NoveltyStatus novelty;
  std::vector<std::string> refinement_history;  // append-only prior descriptions
  bool general_improvement = false;  // set when proposed without limitations

  nlohmann::json to_json() const;
  static IdeaCard from_json(const nlohmann::json& j);
};

class IdeaEngine {
public:
  IdeaEngine(TextBackend& text, SearchBackend& search, WarnSink warn);

  // When the baseline work's external id is known, novelty checks also pull
  // the papers citing it into the comparison pool.
  void set_baseline_work(std::string external_id) { baseline_work_ = std::move(external_id); }

  // Limitations quoted from `paper_text`; items whose evidence is not a
  // verbatim substring are dropped with a warning.
  std::vector<Limitation> extract_limitations(const std::string& paper_text);

  // At most `n` idea cards, each tied to existing limitation ids; cards are
  // born Unchecked. With no limitations available the cards are flagged as
  // general-improvement proposals.
  std::vector<IdeaCard> propose_ideas(const std::string& paper_text,
                                      const std::vector<Limitation>& limitations, int n);

  // One novelty probe for an Unchecked idea: literature hits plus a backend
  // similarity judgment decide Similar(refs) vs Distinct.
  IdeaCard novelty_check(const IdeaCard& idea);

  // Rewrites a Similar idea to set it apart from its refs; the old
  // description moves into the refinement history and the idea goes back to
  // Unchecked for a re-check.
  IdeaCard refine_idea(const IdeaCard& idea);

  // check -> refine loop, bounded by `max_refinements`; ideas that stay
  // Similar past the bound come back Rejected.
  IdeaCard resolve_novelty(IdeaCard idea, int max_refinements);

private:
  TextBackend& text_;
  SearchBackend& search_;
  WarnSink warn_;
  std::string baseline_work_;
};

}  // namespace labpilot
