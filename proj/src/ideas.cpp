#include "labpilot/ideas.hpp"

#include "labpilot/errors.hpp"
#include "labpilot/json_util.hpp"

#include <algorithm>
#include <set>

namespace labpilot {

const char* to_string(NoveltyKind k) {
  switch (k) {
    case NoveltyKind::Unchecked: return "Unchecked";
    case NoveltyKind::Similar: return "Similar";
    case NoveltyKind::Distinct: return "Distinct";
    case NoveltyKind::Rejected: return "Rejected";
  }
  return "Unchecked";
}

nlohmann::json Limitation::to_json() const {
  return {{"id", id}, {"statement", statement}, {"evidence", evidence}};
}

Limitation Limitation::from_json(const nlohmann::json& j) {
  return Limitation{j.value("id", ""), j.value("statement", ""), j.value("evidence", "")};
}

nlohmann::json IdeaCard::to_json() const {
  return {{"id", id},
          {"title", title},
          {"description", description},
          {"limitations_addressed", limitations_addressed},
          {"novelty", to_string(novelty.kind)},
          {"similar_refs", novelty.similar_refs},
          {"refinement_history", refinement_history},
          {"general_improvement", general_improvement}};
}

IdeaCard IdeaCard::from_json(const nlohmann::json& j) {
  IdeaCard c;
  c.id = j.value("id", "");
  c.title = j.value("title", "");
  c.description = j.value("description", "");
  if (j.contains("limitations_addressed"))
    c.limitations_addressed = j.at("limitations_addressed").get<std::vector<std::string>>();
  std::string nov = j.value("novelty", "Unchecked");
  if (nov == "Similar") c.novelty.kind = NoveltyKind::Similar;
  else if (nov == "Distinct") c.novelty.kind = NoveltyKind::Distinct;
  else if (nov == "Rejected") c.novelty.kind = NoveltyKind::Rejected;
  if (j.contains("similar_refs"))
    c.novelty.similar_refs = j.at("similar_refs").get<std::vector<std::string>>();
  if (j.contains("refinement_history"))
    c.refinement_history = j.at("refinement_history").get<std::vector<std::string>>();
  c.general_improvement = j.value("general_improvement", false);
  return c;
}

IdeaEngine::IdeaEngine(TextBackend& text, SearchBackend& search, WarnSink warn)
    : text_(text), search_(search), warn_(std::move(warn)) {}

std::vector<Limitation> IdeaEngine::extract_limitations(const std::string& paper_text) {
  if (trim(paper_text).empty())
    throw InputError("extract_limitations: paper text must be non-empty");

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Read the baseline paper below and output the limitations of the work as a JSON "
      "array of objects {\"statement\": ..., \"evidence\": ...}. The evidence field must "
      "quote a verbatim span from the paper that motivates the limitation.";
  prompt.attachments.push_back({"baseline_paper", paper_text, std::nullopt});

  nlohmann::json payload = parse_json_payload(text_.complete_text(prompt));
  std::vector<Limitation> out;
  int counter = 1;
  for (const auto& item : payload) {
    Limitation lim;
    lim.statement = trim(item.value("statement", ""));
    lim.evidence = item.value("evidence", "");
    if (lim.statement.empty()) continue;
    if (paper_text.find(lim.evidence) == std::string::npos || trim(lim.evidence).empty()) {
      warn_("limitation dropped: evidence is not a verbatim span of the paper text (\"" +
            lim.statement + "\")");
      continue;
    }
    lim.id = "lim-" + std::to_string(counter++);
    out.push_back(std::move(lim));
  }
  return out;
}

std::vector<IdeaCard> IdeaEngine::propose_ideas(const std::string& paper_text,
                                                const std::vector<Limitation>& limitations,
                                                int n) {
  if (n < 1) throw InputError("propose_ideas: n must be >= 1");
  if (trim(paper_text).empty()) throw InputError("propose_ideas: paper text must be non-empty");

  std::set<std::string> known_ids;
  nlohmann::json lim_json = nlohmann::json::array();
  for (const auto& l : limitations) {
    known_ids.insert(l.id);
    lim_json.push_back(l.to_json());
  }
  bool general = limitations.empty();
  if (general)
    warn_("no limitations available; ideas will be flagged as general improvements");

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Propose up to " + std::to_string(n) +
      " research ideas that improve the baseline work. Answer as a JSON array of objects "
      "{\"title\": ..., \"description\": ..., \"limitations\": [limitation ids]}."
      + (general ? " No limitations were identified, so state that each idea targets a "
                   "general improvement."
                 : " Each idea must address at least one of the listed limitations.");
  prompt.attachments.push_back({"baseline_paper", paper_text, std::nullopt});
  prompt.attachments.push_back({"limitations", lim_json.dump(2), std::nullopt});

  nlohmann::json payload = parse_json_payload(text_.complete_text(prompt));
  std::vector<IdeaCard> cards;
  int counter = 1;
  for (const auto& item : payload) {
    if (static_cast<int>(cards.size()) >= n) break;
    IdeaCard card;
    card.title = trim(item.value("title", ""));
    card.description = trim(item.value("description", ""));
    if (card.title.empty() || card.description.empty()) continue;
    if (item.contains("limitations"))
      for (const auto& lid : item.at("limitations")) {
        std::string id = lid.get<std::string>();
        if (known_ids.count(id)) {
          card.limitations_addressed.push_back(id);
        } else {
          warn_("idea \"" + card.title + "\" references unknown limitation id '" + id + "'");
        }
      }
    if (!general && card.limitations_addressed.empty()) {
      warn_("idea \"" + card.title + "\" dropped: no valid limitation reference");
      continue;
    }
    card.general_improvement = general;
    card.id = "idea-" + std::to_string(counter++);
    cards.push_back(std::move(card));
  }
  return cards;
}

IdeaCard IdeaEngine::novelty_check(const IdeaCard& idea) {
  if (idea.novelty.kind != NoveltyKind::Unchecked)
    throw InputError("novelty_check: idea '" + idea.id + "' was already checked (" +
                     to_string(idea.novelty.kind) + ")");

  // Comparison pool: papers with similar concepts, plus papers citing the
  // baseline work when its id is known.
  auto hits = search_.search(idea.title, 10);
  if (!baseline_work_.empty()) {
    std::set<std::string> seen;
    for (const auto& h : hits) seen.insert(h.title);
    for (auto& h : search_.citing(baseline_work_, 10))
      if (!seen.count(h.title)) hits.push_back(std::move(h));
  }
  IdeaCard out = idea;
  if (hits.empty()) {
    out.novelty.kind = NoveltyKind::Distinct;
    return out;
  }

  nlohmann::json hits_json = nlohmann::json::array();
  for (const auto& h : hits) hits_json.push_back(h.to_json());

  PromptBundle prompt;
  prompt.role = PromptRole::Review;
  prompt.body =
      "Compare the research idea with the retrieved papers below. Answer with a JSON array "
      "of the 0-based indices of papers that are conceptually similar to the idea; answer "
      "[] when none are.";
  prompt.attachments.push_back({"idea", idea.to_json().dump(2), std::nullopt});
  prompt.attachments.push_back({"retrieved_papers", hits_json.dump(2), std::nullopt});

  nlohmann::json verdict = parse_json_payload(text_.complete_text(prompt));
  std::vector<std::string> refs;
  for (const auto& v : verdict) {
    if (!v.is_number_integer()) continue;
    int idx = v.get<int>();
    if (idx >= 0 && idx < static_cast<int>(hits.size()))
      refs.push_back(hits[idx].title.empty() ? hits[idx].external_id : hits[idx].title);
  }
  if (refs.empty()) {
    out.novelty.kind = NoveltyKind::Distinct;
  } else {
    out.novelty.kind = NoveltyKind::Similar;
    out.novelty.similar_refs = std::move(refs);
  }
  return out;
}

IdeaCard IdeaEngine::refine_idea(const IdeaCard& idea) {
  if (idea.novelty.kind != NoveltyKind::Similar)
    throw InputError("refine_idea: idea '" + idea.id + "' is not marked Similar");

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "The idea below overlaps with prior work. Rewrite its description so the proposal is "
      "clearly distinguished from the listed papers. Answer with the new description only.";
  prompt.attachments.push_back({"idea", idea.to_json().dump(2), std::nullopt});
  prompt.attachments.push_back({"overlapping_papers", join(idea.novelty.similar_refs, "\n"),
                                std::nullopt});

  std::string revised = trim(text_.complete_text(prompt));
  IdeaCard out = idea;
  out.refinement_history.push_back(idea.description);
  if (revised.empty() || revised == idea.description)
    warn_("refinement left idea '" + idea.id + "' unchanged");
  else
    out.description = revised;
  out.novelty = NoveltyStatus{};  // back to Unchecked for the re-check
  return out;
}

IdeaCard IdeaEngine::resolve_novelty(IdeaCard idea, int max_refinements) {
  for (int round = 0; round <= max_refinements; ++round) {
    idea = novelty_check(idea);
    if (idea.novelty.kind == NoveltyKind::Distinct) return idea;
    if (round == max_refinements) break;
    idea = refine_idea(idea);
  }
  warn_("idea '" + idea.id + "' rejected: still similar after " +
        std::to_string(max_refinements) + " refinements");
  idea.novelty.kind = NoveltyKind::Rejected;
  return idea;
}

}  // namespace labpilot
