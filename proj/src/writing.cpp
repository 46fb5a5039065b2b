#include "labpilot/writing.hpp"

#include "labpilot/json_util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace labpilot {

using nlohmann::json;

const char* to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::LogicalConsistency: return "LogicalConsistency";
    case FeedbackKind::Formatting: return "Formatting";
    case FeedbackKind::Figures: return "Figures";
    case FeedbackKind::AIReview: return "AIReview";
  }
  return "LogicalConsistency";
}

const char* to_string(RevisionCause c) {
  switch (c) {
    case RevisionCause::Draft: return "Draft";
    case RevisionCause::RelatedWorkRewrite: return "RelatedWorkRewrite";
    case RevisionCause::CitationFix: return "CitationFix";
    case RevisionCause::Reflection: return "Reflection";
    case RevisionCause::LengthAdjust: return "LengthAdjust";
  }
  return "Draft";
}

const char* to_string(FigurePlacement p) {
  switch (p) {
    case FigurePlacement::Main: return "Main";
    case FigurePlacement::Appendix: return "Appendix";
    case FigurePlacement::Removed: return "Removed";
  }
  return "Main";
}

std::optional<FeedbackKind> feedback_kind_from(const std::string& s) {
  if (s == "LogicalConsistency") return FeedbackKind::LogicalConsistency;
  if (s == "Formatting") return FeedbackKind::Formatting;
  if (s == "Figures") return FeedbackKind::Figures;
  if (s == "AIReview") return FeedbackKind::AIReview;
  return std::nullopt;
}

std::optional<FigurePlacement> placement_from(const std::string& s) {
  if (s == "Main") return FigurePlacement::Main;
  if (s == "Appendix") return FigurePlacement::Appendix;
  if (s == "Removed") return FigurePlacement::Removed;
  return std::nullopt;
}

json StructuredReview::to_json() const {
  json sc = json::object();
  for (const auto& [name, v] : scores) sc[name] = v;
  return {{"summary", summary}, {"strengths", strengths}, {"weaknesses", weaknesses},
          {"scores", sc}};
}

// ---- manuscript state ------------------------------------------------------------

const std::string* ManuscriptState::section(const std::string& name) const {
  for (const auto& [n, text] : sections)
    if (n == name) return &text;
  return nullptr;
}

void ManuscriptState::set_section(const std::string& name, std::string text) {
  for (auto& [n, t] : sections)
    if (n == name) {
      t = std::move(text);
      return;
    }
  sections.emplace_back(name, std::move(text));
}

std::string ManuscriptState::full_source() const {
  std::ostringstream out;
  for (const auto& [name, text] : sections) out << text << "\n";
  for (const auto& fig : figures) out << fig.caption << "\n";
  return out.str();
}

void ManuscriptState::commit(RevisionCause cause, std::optional<FeedbackKind> kind) {
  ++revision;
  lineage.push_back({revision, cause, kind});
  cite_keys_used = cite_keys(full_source());
}

json ManuscriptState::to_json() const {
  json secs = json::array();
  for (const auto& [name, text] : sections) secs.push_back({{"name", name}, {"text", text}});
  json figs = json::array();
  for (const auto& f : figures)
    figs.push_back({{"path", f.path},
                    {"source", f.source},
                    {"caption", f.caption},
                    {"placement", to_string(f.placement)}});
  json lin = json::array();
  for (const auto& l : lineage) {
    json e{{"revision", l.revision}, {"cause", to_string(l.cause)}};
    if (l.kind) e["kind"] = to_string(*l.kind);
    lin.push_back(e);
  }
  json j{{"sections", secs},
         {"figures", figs},
         {"cite_keys_used", std::vector<std::string>(cite_keys_used.begin(),
                                                     cite_keys_used.end())},
         {"revision", revision},
         {"lineage", lin},
         {"flags", flags},
         {"page_count_estimated", page_count_estimated}};
  if (page_count) j["page_count"] = *page_count;
  return j;
}

ManuscriptState ManuscriptState::from_json(const json& j) {
  ManuscriptState ms;
  for (const auto& s : j.value("sections", json::array()))
    ms.sections.emplace_back(s.value("name", ""), s.value("text", ""));
  for (const auto& f : j.value("figures", json::array())) {
    FigureEntry fe;
    fe.path = f.value("path", "");
    fe.source = f.value("source", "");
    fe.caption = f.value("caption", "");
    fe.placement = placement_from(f.value("placement", "Main")).value_or(FigurePlacement::Main);
    ms.figures.push_back(std::move(fe));
  }
  for (const auto& k : j.value("cite_keys_used", std::vector<std::string>{}))
    ms.cite_keys_used.insert(k);
  ms.revision = j.value("revision", 0);
  for (const auto& l : j.value("lineage", json::array())) {
    LineageEntry e;
    e.revision = l.value("revision", 0);
    std::string cause = l.value("cause", "Draft");
    if (cause == "RelatedWorkRewrite") e.cause = RevisionCause::RelatedWorkRewrite;
    else if (cause == "CitationFix") e.cause = RevisionCause::CitationFix;
    else if (cause == "Reflection") e.cause = RevisionCause::Reflection;
    else if (cause == "LengthAdjust") e.cause = RevisionCause::LengthAdjust;
    if (l.contains("kind")) e.kind = feedback_kind_from(l.value("kind", ""));
    ms.lineage.push_back(e);
  }
  ms.flags = j.value("flags", std::vector<std::string>{});
  if (j.contains("page_count")) ms.page_count = j.at("page_count").get<int>();
  ms.page_count_estimated = j.value("page_count_estimated", false);
  return ms;
}

namespace {

std::string rel_str(const fs::path& base, const fs::path& p) {
  if (base.empty()) return p.generic_string();
  if (auto r = relative_within(base, p)) return *r;
  return p.generic_string();
}

fs::path abs_path(const fs::path& base, const std::string& s) {
  fs::path p(s);
  if (base.empty() || p.is_absolute()) return p;
  return base / p;
}

}  // namespace

json ResourceBundle::to_json(const fs::path& base) const {
  json sums = json::object();
  for (const auto& [name, p] : summaries) sums[name] = rel_str(base, p);
  json j{{"template_dir", rel_str(base, template_dir)},
         {"instruction_doc", rel_str(base, instruction_doc)},
         {"summaries", sums},
         {"method_description", method_description}};
  json bl = json::array();
  for (const auto& p : baseline_latex) bl.push_back(rel_str(base, p));
  j["baseline_latex"] = bl;
  if (baseline_pdf) j["baseline_pdf"] = rel_str(base, *baseline_pdf);
  json code = json::array();
  for (const auto& p : stage2_code) code.push_back(rel_str(base, p));
  j["stage2_code"] = code;
  json tabs = json::array();
  for (const auto& p : ablation_tables) tabs.push_back(rel_str(base, p));
  j["ablation_tables"] = tabs;
  return j;
}

ResourceBundle ResourceBundle::from_json(const json& j, const fs::path& base) {
  ResourceBundle b;
  b.template_dir = abs_path(base, j.value("template_dir", ""));
  b.instruction_doc = abs_path(base, j.value("instruction_doc", ""));
  for (const auto& p : j.value("baseline_latex", std::vector<std::string>{}))
    b.baseline_latex.push_back(abs_path(base, p));
  if (j.contains("baseline_pdf"))
    b.baseline_pdf = abs_path(base, j.at("baseline_pdf").get<std::string>());
  for (const auto& p : j.value("stage2_code", std::vector<std::string>{}))
    b.stage2_code.push_back(abs_path(base, p));
  if (j.contains("summaries"))
    for (auto it = j.at("summaries").begin(); it != j.at("summaries").end(); ++it)
      b.summaries[it.key()] = abs_path(base, it->get<std::string>());
  for (const auto& p : j.value("ablation_tables", std::vector<std::string>{}))
    b.ablation_tables.push_back(abs_path(base, p));
  b.method_description = j.value("method_description", "");
  return b;
}

// ---- rendering ----------------------------------------------------------------------

namespace {

std::string section_slug(const std::string& name) {
  std::string slug;
  for (char c : to_lower(name))
    slug += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return slug;
}

std::string figure_block(const FigureEntry& fig) {
  std::ostringstream out;
  out << "\\begin{figure}[t]\n"
      << "  \\centering\n"
      << "  \\includegraphics[width=0.8\\linewidth]{" << fig.path << "}\n"
      << "  \\caption{" << fig.caption << "}\n"
      << "\\end{figure}\n";
  return out.str();
}

}  // namespace

std::string render_manuscript(const ManuscriptState& ms, const RunConfig& config,
                              const std::string& title, const fs::path& writing_dir) {
  fs::create_directories(writing_dir / "sections");

  std::ostringstream main_fig, appendix_fig;
  for (const auto& fig : ms.figures) {
    if (fig.placement == FigurePlacement::Main) main_fig << figure_block(fig);
    if (fig.placement == FigurePlacement::Appendix) appendix_fig << figure_block(fig);
  }
  write_file(writing_dir / "figures_main.tex", main_fig.str());
  write_file(writing_dir / "figures_appendix.tex", appendix_fig.str());

  std::ostringstream paper;
  paper << "% generated; edit the files under sections/ instead\n"
        << "\\documentclass{article}\n"
        << "\\usepackage{graphicx}\n"
        << "\\usepackage{natbib}\n";
  if (fs::exists(writing_dir / "template" / "preamble.tex"))
    paper << "\\input{template/preamble}\n";
  paper << "\\title{" << title << "}\n\\author{}\n\\date{}\n"
        << "\\begin{document}\n\\maketitle\n";

  const std::string* abstract = ms.section("Abstract");
  if (abstract) paper << "\\begin{abstract}\n" << *abstract << "\n\\end{abstract}\n";

  // Body sections in order; the appendix goes after the bibliography.
  std::vector<std::pair<std::string, std::string>> body;
  std::optional<std::pair<std::string, std::string>> appendix;
  for (const auto& [name, text] : ms.sections) {
    if (name == "Abstract") continue;
    if (name == "Appendix") {
      appendix = {name, text};
      continue;
    }
    body.emplace_back(name, text);
  }

  size_t figures_after = body.size();  // default: after the last body section
  for (size_t i = 0; i < body.size(); ++i)
    if (body[i].first == "Experiments") figures_after = i + 1;

  for (size_t i = 0; i < body.size(); ++i) {
    const auto& [name, text] = body[i];
    std::string slug = section_slug(name);
    write_file(writing_dir / "sections" / (slug + ".tex"),
               "\\section{" + name + "}\n" + text + "\n");
    paper << "\\input{sections/" << slug << "}\n";
    if (i + 1 == figures_after) paper << "\\input{figures_main}\n";
  }
  if (body.empty()) paper << "\\input{figures_main}\n";

  paper << "\\bibliographystyle{plainnat}\n\\bibliography{verified}\n";

  if (appendix) {
    write_file(writing_dir / "sections" / "appendix.tex",
               "\\section{" + appendix->first + "}\n" + appendix->second + "\n");
    paper << "\\appendix\n\\input{sections/appendix}\n\\input{figures_appendix}\n";
  }
  paper << "\\end{document}\n";

  write_file(writing_dir / "paper.tex", paper.str());
  return "paper.tex";
}

void write_stub_pdf(const fs::path& path, int pages) {
  pages = std::max(1, pages);
  // Hand-rolled minimal PDF: one empty page object per counted page.
  std::ostringstream body;
  std::vector<size_t> offsets;
  std::ostringstream kids;
  for (int i = 0; i < pages; ++i) kids << (3 + i) << " 0 R ";

  std::string header = "%PDF-1.4\n";
  std::vector<std::string> objects;
  objects.push_back("1 0 obj\n<< /Type /Catalog /Pages 2 0 R >>\nendobj\n");
  objects.push_back("2 0 obj\n<< /Type /Pages /Kids [" + kids.str() + "] /Count " +
                    std::to_string(pages) + " >>\nendobj\n");
  for (int i = 0; i < pages; ++i)
    objects.push_back(std::to_string(3 + i) +
                      " 0 obj\n<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] >>\n"
                      "endobj\n");

  std::string out = header;
  std::vector<size_t> xref{0};
  for (const auto& obj : objects) {
    xref.push_back(out.size());
    out += obj;
  }
  size_t xref_pos = out.size();
  out += "xref\n0 " + std::to_string(objects.size() + 1) + "\n";
  out += "0000000000 65535 f \n";
  char buf[32];
  for (size_t i = 1; i < xref.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%010zu 00000 n \n", xref[i]);
    out += buf;
  }
  out += "trailer\n<< /Size " + std::to_string(objects.size() + 1) +
         " /Root 1 0 R >>\nstartxref\n" + std::to_string(xref_pos) + "\n%%EOF\n";
  write_file(path, out);
}

PageCount EstimatePageCounter::count(const fs::path& dir, const std::string& main_file) {
  std::string text = read_file(dir / main_file);
  // Inline one level of \input{...} so section content is counted.
  std::ostringstream flat;
  for (const auto& line : split(text, '\n')) {
    std::string t = trim(line);
    if (t.rfind("\\input{", 0) == 0 && t.back() == '}') {
      std::string inc = t.substr(7, t.size() - 8);
      fs::path p = dir / (inc + ".tex");
      if (!fs::exists(p)) p = dir / inc;
      if (fs::exists(p)) {
        flat << read_file(p) << "\n";
        continue;
      }
    }
    flat << line << "\n";
  }
  int lines = 0;
  for (const auto& line : split(flat.str(), '\n'))
    if (!trim(line).empty()) ++lines;
  PageCount pc;
  pc.pages = std::max(1, (lines + lines_per_page_ - 1) / lines_per_page_);
  pc.estimated = true;
  return pc;
}

PageCount CommandPageCounter::count(const fs::path& dir, const std::string& main_file) {
  std::string cmd = "cd '" + dir.string() + "' && " + command_ + " " + main_file +
                    " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  (void)rc;  // some compilers exit nonzero on warnings; trust the log
  fs::path log = dir / (fs::path(main_file).stem().string() + ".log");
  if (!fs::exists(log)) throw TransientError("compile produced no log file");
  std::string text = read_file(log);
  size_t pos = text.rfind("Output written on");
  if (pos == std::string::npos) throw TransientError("compile log reports no output document");
  size_t open = text.find('(', pos);
  if (open == std::string::npos) throw TransientError("compile log page count not found");
  int pages = std::atoi(text.c_str() + open + 1);
  if (pages <= 0) throw TransientError("compile log page count not parseable");
  return PageCount{pages, false};
}

std::string replace_cite_key(const std::string& latex, const std::string& old_key,
                             const std::optional<std::string>& new_key) {
  std::string out;
  size_t pos = 0;
  size_t scan = 0;
  while ((scan = latex.find("\\cite", scan)) != std::string::npos) {
    size_t i = scan + 5;
    while (i < latex.size() && std::isalpha(static_cast<unsigned char>(latex[i]))) ++i;
    if (i < latex.size() && latex[i] == '*') ++i;
    size_t after_name = i;
    while (i < latex.size() && std::isspace(static_cast<unsigned char>(latex[i]))) ++i;
    for (int opt = 0; opt < 2 && i < latex.size() && latex[i] == '['; ++opt) {
      size_t close = latex.find(']', i);
      if (close == std::string::npos) break;
      i = close + 1;
      while (i < latex.size() && std::isspace(static_cast<unsigned char>(latex[i]))) ++i;
    }
    if (i >= latex.size() || latex[i] != '{') {
      scan = after_name;
      continue;
    }
    size_t close = latex.find('}', i);
    if (close == std::string::npos) break;

    std::vector<std::string> keys = split_list(latex.substr(i + 1, close - i - 1));
    std::vector<std::string> kept;
    bool touched = false;
    for (const auto& k : keys) {
      if (k == old_key) {
        touched = true;
        if (new_key) kept.push_back(*new_key);
      } else {
        kept.push_back(k);
      }
    }
    out += latex.substr(pos, scan - pos);
    if (!touched) {
      out += latex.substr(scan, close + 1 - scan);
    } else if (!kept.empty()) {
      out += latex.substr(scan, i - scan) + "{" + join(kept, ",") + "}";
    }  // else: the whole citation command is dropped
    pos = close + 1;
    scan = close + 1;
  }
  out += latex.substr(pos);
  return out;
}

std::optional<std::string> extract_latex_section(const std::string& latex,
                                                 const std::string& name) {
  std::string lower = to_lower(latex);
  std::string needle = to_lower(name);
  size_t pos = 0;
  while ((pos = lower.find("\\section", pos)) != std::string::npos) {
    size_t open = lower.find('{', pos);
    if (open == std::string::npos) return std::nullopt;
    size_t close = lower.find('}', open);
    if (close == std::string::npos) return std::nullopt;
    std::string title = lower.substr(open + 1, close - open - 1);
    if (title.find(needle) != std::string::npos) {
      size_t body_start = close + 1;
      size_t next = lower.find("\\section", body_start);
      size_t appendix = lower.find("\\appendix", body_start);
      size_t end_doc = lower.find("\\end{document}", body_start);
      size_t end = std::min({next == std::string::npos ? latex.size() : next,
                             appendix == std::string::npos ? latex.size() : appendix,
                             end_doc == std::string::npos ? latex.size() : end_doc});
      return trim(latex.substr(body_start, end - body_start));
    }
    pos = close;
  }
  return std::nullopt;
}

// ---- engine ------------------------------------------------------------------------

WritingEngine::WritingEngine(RunContext& ctx) : ctx_(ctx) {}

namespace {

void check_summary_schema(const json& summary, const std::string& what) {
  if (!summary.is_object() || !summary.contains("settings") ||
      !summary.at("settings").is_array())
    throw InputError(what + ": summary must be an object with a settings array");
  for (const auto& row : summary.at("settings")) {
    if (!row.is_object() || !row.contains("name") || !row.at("name").is_string() ||
        !row.contains("metrics") || !row.at("metrics").is_object())
      throw InputError(what + ": each setting needs a name and a metrics object");
    for (const auto& [k, v] : row.at("metrics").items()) {
      (void)k;
      if (!v.is_string() && !v.is_number())
        throw InputError(what + ": metric values must be strings or numbers");
    }
  }
}

std::string cell_text(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

std::set<std::string> extract_identifiers(const std::string& code) {
  static const std::set<std::string> stop = {
      "def",    "class", "import", "return", "while", "else",  "elif",  "from",
      "with",   "print", "range",  "None",   "True",  "False", "self",  "lambda",
      "break",  "continue", "pass", "global", "assert", "yield", "raise", "except",
      "try",    "finally", "open", "main",   "this",  "that",  "then",  "echo",
      "results", "figures", "json", "data",  "file",  "path",  "name"};
  std::set<std::string> ids;
  std::string token;
  for (size_t i = 0; i <= code.size(); ++i) {
    char c = i < code.size() ? code[i] : ' ';
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      token += c;
      continue;
    }
    if (token.size() >= 4 && !std::isdigit(static_cast<unsigned char>(token[0])) &&
        !stop.count(token))
      ids.insert(token);
    token.clear();
  }
  return ids;
}

std::string summaries_attachment_text(const ResourceBundle& bundle) {
  std::ostringstream out;
  for (const auto& [name, path] : bundle.summaries)
    out << "## " << name << "\n" << read_file(path) << "\n";
  return out.str();
}

json sections_json(const ManuscriptState& ms) {
  json j = json::object();
  for (const auto& [name, text] : ms.sections) j[name] = text;
  return j;
}

json registry_json(const ManuscriptState& ms) {
  json arr = json::array();
  for (const auto& f : ms.figures)
    arr.push_back({{"path", f.path}, {"caption", f.caption},
                   {"placement", to_string(f.placement)}});
  return arr;
}

}  // namespace

std::string WritingEngine::summaries_to_tables(const json& summary) {
  check_summary_schema(summary, "summaries_to_tables");
  const json& settings = summary.at("settings");

  // Column order: metric names in first appearance order across rows.
  std::vector<std::string> columns;
  bool any_params = false;
  for (const auto& row : settings) {
    for (const auto& [k, v] : row.at("metrics").items()) {
      (void)v;
      if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
    }
    if (row.contains("params") && row.at("params").is_object() && !row.at("params").empty())
      any_params = true;
  }

  std::ostringstream out;
  out << "\\begin{tabular}{l";
  if (any_params) out << "l";
  for (size_t i = 0; i < columns.size(); ++i) out << "c";
  out << "}\n\\hline\nSetting";
  if (any_params) out << " & Params";
  for (const auto& c : columns) out << " & " << c;
  out << " \\\\\n\\hline\n";

  for (const auto& row : settings) {
    out << cell_text(row.at("name"));
    if (any_params) {
      std::vector<std::string> kv;
      if (row.contains("params") && row.at("params").is_object())
        for (const auto& [k, v] : row.at("params").items()) kv.push_back(k + "=" + cell_text(v));
      out << " & " << join(kv, ", ");
    }
    for (const auto& c : columns) {
      out << " & ";
      if (row.at("metrics").contains(c)) out << cell_text(row.at("metrics").at(c));
      else out << "--";
    }
    out << " \\\\\n";
  }
  out << "\\hline\n\\end{tabular}\n";
  return out.str();
}

ResourceBundle WritingEngine::assemble_resources(const fs::path& stage2_workspace,
                                                 const std::string& method_description) const {
  const RunConfig& config = ctx_.config;
  ResourceBundle b;

  auto require = [](const fs::path& p, const std::string& what) {
    if (!fs::exists(p))
      throw FatalError("missing required writing resource: " + what + " (" +
                       p.generic_string() + ")");
  };

  b.template_dir = ctx_.writing_dir() / "template";
  require(b.template_dir, "conference template directory");
  b.instruction_doc = ctx_.paper_dir() / "writing_guidelines.md";
  require(b.instruction_doc, "writing instruction document");

  if (fs::is_directory(ctx_.paper_dir())) {
    for (const auto& e : fs::recursive_directory_iterator(ctx_.paper_dir()))
      if (e.is_regular_file() && e.path().extension() == ".tex")
        b.baseline_latex.push_back(e.path());
    std::sort(b.baseline_latex.begin(), b.baseline_latex.end());
    for (const auto& e : fs::directory_iterator(ctx_.paper_dir()))
      if (e.is_regular_file() && e.path().extension() == ".pdf") {
        b.baseline_pdf = e.path();
        break;
      }
  }
  if (b.baseline_latex.empty())
    ctx_.warn("no baseline LaTeX sources found; method preview and related-work guidance "
              "will be thin");
  if (!b.baseline_pdf) ctx_.warn("missing baseline PDF (optional resource)");

  fs::path code = stage2_workspace / config.stage2_entry;
  require(code, "stage-2 implementation " + config.stage2_entry);
  b.stage2_code.push_back(code);
  if (fs::exists(stage2_workspace / config.stage1_entry))
    b.stage2_code.push_back(stage2_workspace / config.stage1_entry);

  for (const char* name :
       {"baseline_summary", "improved_research_summary", "component_ablation_summary",
        "hyperparam_ablation_summary"}) {
    fs::path p = ctx_.summaries_dir() / (std::string(name) + ".json");
    require(p, std::string(name) + ".json");
    check_summary_schema(read_json_file(p), name);
    b.summaries[name] = p;
  }

  for (const char* name : {"component_ablation_summary_table", "hyperparam_ablation_summary_table"}) {
    fs::path p = ctx_.writing_dir() / (std::string(name) + ".tex");
    require(p, std::string(name) + ".tex");
    b.ablation_tables.push_back(p);
  }

  if (trim(method_description).empty())
    throw FatalError("missing required writing resource: method description");
  b.method_description = method_description;
  return b;
}

std::string WritingEngine::write_method_section(const ResourceBundle& bundle,
                                                std::vector<std::string>& flags) {
  std::string code_text;
  for (const auto& p : bundle.stage2_code) code_text += read_file(p) + "\n";
  if (trim(code_text).empty())
    throw InputError("write_method_section: stage-2 code is empty");
  std::set<std::string> identifiers = extract_identifiers(code_text);
  if (identifiers.empty())
    throw InputError("write_method_section: stage-2 code contains no usable identifiers");

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Write the Method section of the manuscript. Start with a concise preview of the "
      "baseline method drawn from the baseline sources, then describe the proposed method "
      "in detail, grounded in the attached implementation code. Mention concrete "
      "identifiers from the code so the description stays tied to what was actually run. " +
      std::string(kNoFabricationClause);
  if (!bundle.baseline_latex.empty())
    prompt.attachments.push_back(
        {"baseline_source", read_file(bundle.baseline_latex.front()), std::nullopt});
  prompt.attachments.push_back({"stage2_code", code_text, std::nullopt});
  prompt.attachments.push_back({"method_description", bundle.method_description, std::nullopt});
  prompt.attachments.push_back({"writing_guidelines", read_file(bundle.instruction_doc),
                                std::nullopt});

  std::string text;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    text = retry_transient(ctx_, "method section", [&] {
      return ctx_.text->complete_text(prompt);
    });
    for (const auto& id : identifiers)
      if (text.find(id) != std::string::npos) return text;
    ctx_.warn("method section mentions no identifier from the stage-2 code (attempt " +
              std::to_string(attempt) + ")");
    prompt.body += " You must reference at least one identifier that appears verbatim in "
                   "the attached code.";
  }
  flags.push_back("method_grounding_unverified");
  return text;
}

std::vector<std::pair<std::string, std::string>> WritingEngine::outline_structure(
    const ResourceBundle& bundle, const std::string& method_section) {
  const auto& wanted = ctx_.config.section_list;

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Summarize the planned paper structure before full drafting. Return a JSON object "
      "mapping each section name to a 1-3 sentence summary of its planned content. Cover "
      "exactly these sections: " + join(wanted, ", ") + ".";
  prompt.attachments.push_back({"method_section", method_section, std::nullopt});
  prompt.attachments.push_back({"summaries", summaries_attachment_text(bundle), std::nullopt});

  for (int attempt = 1; attempt <= 2; ++attempt) {
    json payload;
    try {
      payload = parse_json_payload(retry_transient(ctx_, "outline", [&] {
        return ctx_.text->complete_text(prompt);
      }));
    } catch (const InputError& e) {
      ctx_.warn(std::string("outline not parseable: ") + e.what());
      continue;
    }
    std::vector<std::string> missing;
    for (const auto& name : wanted)
      if (!payload.contains(name) || !payload.at(name).is_string()) missing.push_back(name);
    if (missing.empty()) {
      std::vector<std::pair<std::string, std::string>> outline;
      for (const auto& name : wanted) outline.emplace_back(name, payload.at(name));
      return outline;
    }
    ctx_.warn("outline missing sections: " + join(missing, ", "));
    prompt.body += " Every listed section must be present as a key.";
  }
  throw InputError("outline did not cover the configured section list after a retry");
}

std::vector<FigureEntry> WritingEngine::collect_figures(const ResourceBundle& bundle) const {
  std::vector<FigureEntry> figures;
  std::set<std::string> seen;
  int counter = 0;
  fs::create_directories(ctx_.writing_dir() / "figures");
  for (const auto& [sum_name, path] : bundle.summaries) {
    json summary = read_json_file(path);
    for (const auto& row : summary.value("settings", json::array())) {
      for (const auto& art : row.value("artifacts", std::vector<std::string>{})) {
        if (seen.count(art)) continue;
        seen.insert(art);
        fs::path src = ctx_.abs(art);
        if (!fs::exists(src)) {
          ctx_.warn("summary artifact missing on disk, skipped as figure: " + art);
          continue;
        }
        ++counter;
        std::string rel = "figures/fig" + std::to_string(counter) + "_" +
                          src.filename().generic_string();
        fs::copy_file(src, ctx_.writing_dir() / rel, fs::copy_options::overwrite_existing);
        FigureEntry fig;
        fig.path = rel;
        fig.source = art;
        fig.caption = "Result visualization for " + row.value("name", sum_name) + " (" +
                      sum_name + ").";
        fig.placement = FigurePlacement::Main;
        figures.push_back(std::move(fig));
      }
    }
  }
  return figures;
}

ManuscriptState WritingEngine::write_full_draft(
    const ResourceBundle& bundle,
    const std::vector<std::pair<std::string, std::string>>& outline,
    const std::string& method_section, const std::set<std::string>& citable_keys) {
  const auto& wanted = ctx_.config.section_list;

  json outline_json = json::object();
  for (const auto& [name, text] : outline) outline_json[name] = text;

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Write the full paper draft. Return a JSON object {\"sections\": {name: LaTeX "
      "text}} covering exactly these sections: " + join(wanted, ", ") +
      ". The Method section will be replaced by the prepared one, so a placeholder is "
      "fine there. Cite only keys listed in the verified bibliography attachment, using "
      "\\citep/\\citet. Experimental numbers must come from the attached structured "
      "summaries and generated tables. " + std::string(kNoFabricationClause);
  prompt.attachments.push_back({"outline", outline_json.dump(2), std::nullopt});
  prompt.attachments.push_back({"summaries", summaries_attachment_text(bundle), std::nullopt});
  std::string tables_text;
  for (const auto& t : bundle.ablation_tables)
    tables_text += "% " + t.filename().generic_string() + "\n" + read_file(t) + "\n";
  prompt.attachments.push_back({"generated_tables", tables_text, std::nullopt});
  prompt.attachments.push_back(
      {"verified_bibliography_keys",
       join(std::vector<std::string>(citable_keys.begin(), citable_keys.end()), "\n"),
       std::nullopt});
  prompt.attachments.push_back({"writing_guidelines", read_file(bundle.instruction_doc),
                                std::nullopt});

  ManuscriptState ms;
  ms.figures = collect_figures(bundle);
  prompt.attachments.push_back({"figure_registry", registry_json(ms).dump(2), std::nullopt});

  for (int attempt = 1; attempt <= 2; ++attempt) {
    json payload;
    try {
      payload = parse_json_payload(retry_transient(ctx_, "full draft", [&] {
        return ctx_.text->complete_text(prompt);
      }));
    } catch (const InputError& e) {
      ctx_.warn(std::string("draft not parseable: ") + e.what());
      continue;
    }
    const json& secs = payload.contains("sections") ? payload.at("sections") : payload;
    std::vector<std::string> missing;
    for (const auto& name : wanted)
      if (name != "Method" && (!secs.contains(name) || !secs.at(name).is_string()))
        missing.push_back(name);
    if (!missing.empty()) {
      ctx_.warn("draft missing sections: " + join(missing, ", "));
      prompt.body += " Every listed section must be present.";
      continue;
    }
    for (const auto& name : wanted) {
      if (name == "Method")
        ms.set_section(name, method_section);  // inserted unchanged
      else
        ms.set_section(name, secs.at(name).get<std::string>());
    }
    ms.commit(RevisionCause::Draft);
    return ms;
  }
  throw FatalError("full draft failed twice; writing phase cannot continue");
}

ManuscriptState WritingEngine::rewrite_related_work(ManuscriptState ms,
                                                    const ResourceBundle& bundle,
                                                    const std::set<std::string>& citable_keys) {
  if (!ms.section("Related Work")) {
    ctx_.warn("manuscript has no Related Work section; rewrite skipped");
    return ms;
  }
  std::optional<std::string> baseline_rw;
  for (const auto& p : bundle.baseline_latex) {
    baseline_rw = extract_latex_section(read_file(p), "related work");
    if (baseline_rw) break;
  }
  if (!baseline_rw) {
    ctx_.warn("baseline sources have no related-work section; rewrite skipped");
    return ms;
  }

  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body =
      "Rewrite the Related Work section of the manuscript to position the contribution "
      "clearly. The baseline paper's related-work section is attached as a guide for field "
      "coverage, style, and structure. Cite only keys from the verified bibliography. "
      "Return the revised section text only.";
  prompt.attachments.push_back({"baseline_related_work", *baseline_rw, std::nullopt});
  prompt.attachments.push_back({"current_related_work", *ms.section("Related Work"),
                                std::nullopt});
  prompt.attachments.push_back(
      {"verified_bibliography_keys",
       join(std::vector<std::string>(citable_keys.begin(), citable_keys.end()), "\n"),
       std::nullopt});

  std::string revised = retry_transient(ctx_, "related-work rewrite", [&] {
    return ctx_.text->complete_text(prompt);
  });
  ms.set_section("Related Work", trim(revised));
  ms.commit(RevisionCause::RelatedWorkRewrite);
  return ms;
}

std::pair<json, ManuscriptState> WritingEngine::validate_citations(ManuscriptState ms,
                                                                   VerifiedBibliography& bib,
                                                                   const ResourceBundle& bundle) {
  json report{{"unknown", json::array()},
              {"removed", json::array()},
              {"replaced", json::object()},
              {"suggested", json::array()},
              {"suggestion_applied", false}};
  bool changed = false;

  auto used = cite_keys(ms.full_source());
  std::vector<std::string> unknown;
  for (const auto& k : used)
    if (!bib.contains(k)) unknown.push_back(k);

  for (const auto& key : unknown) {
    report["unknown"].push_back(key);
    std::optional<std::string> replacement;
    try {
      if (auto entry = fetch_entry(key, *ctx_.search, ctx_.warn)) {
        if (bib.contains(entry->key) || bib.verify_and_add(*entry)) replacement = entry->key;
        // an entry already present under the same key also resolves the cite
      }
    } catch (const ConflictError& e) {
      ctx_.warn(std::string("citation conflict needs manual resolution: ") + e.what());
    } catch (const TransientError& e) {
      ctx_.warn(std::string("citation lookup failed: ") + e.what());
    }
    for (auto& [name, text] : ms.sections) text = replace_cite_key(text, key, replacement);
    if (replacement) report["replaced"][key] = *replacement;
    else report["removed"].push_back(key);
    changed = true;
  }

  // Baseline-cited keys the draft does not use yet are suggested additions.
  std::optional<std::string> baseline_rw;
  for (const auto& p : bundle.baseline_latex) {
    baseline_rw = extract_latex_section(read_file(p), "related work");
    if (baseline_rw) break;
  }
  if (baseline_rw && ms.section("Related Work")) {
    auto now_used = cite_keys(ms.full_source());
    std::vector<std::string> missing;
    for (const auto& k : cite_keys(*baseline_rw))
      if (bib.contains(k) && !now_used.count(k)) missing.push_back(k);
    for (const auto& k : missing) report["suggested"].push_back(k);
    if (!missing.empty()) {
      PromptBundle prompt;
      prompt.role = PromptRole::Write;
      prompt.body =
          "The baseline paper cites these verified references in its related work, but the "
          "draft does not: " + join(missing, ", ") +
          ". Revise the Related Work section to cite them where appropriate. Return the "
          "revised section text only.";
      prompt.attachments.push_back({"current_related_work", *ms.section("Related Work"),
                                    std::nullopt});
      try {
        std::string revised = retry_transient(ctx_, "citation suggestions", [&] {
          return ctx_.text->complete_text(prompt);
        });
        auto revised_keys = cite_keys(revised);
        bool all_cited = true;
        for (const auto& k : missing)
          if (!revised_keys.count(k)) all_cited = false;
        if (all_cited) {
          ms.set_section("Related Work", trim(revised));
          report["suggestion_applied"] = true;
          changed = true;
        } else {
          ctx_.warn("suggested baseline citations were not all applied; keeping the section");
        }
      } catch (const Error& e) {
        ctx_.warn(std::string("citation suggestion step failed: ") + e.what());
      }
    }
  }

  // Closure is a hard invariant: anything still unknown is stripped.
  for (const auto& k : cite_keys(ms.full_source())) {
    if (bib.contains(k)) continue;
    ctx_.warn("stripping citation key outside the verified bibliography: " + k);
    for (auto& [name, text] : ms.sections) text = replace_cite_key(text, k, std::nullopt);
    changed = true;
  }

  if (changed) ms.commit(RevisionCause::CitationFix);
  else ms.cite_keys_used = cite_keys(ms.full_source());
  return {report, ms};
}

PromptBundle WritingEngine::build_reflection_prompt(FeedbackKind kind, const ManuscriptState& ms,
                                                    const ResourceBundle& bundle) const {
  PromptBundle prompt;
  prompt.role = PromptRole::Reflect;
  std::string kind_instructions;
  switch (kind) {
    case FeedbackKind::LogicalConsistency:
      kind_instructions =
          "Generate specific, actionable feedback on logical consistency: soundness of the "
          "argument, validity of supporting citations, alignment between experimental "
          "results and textual descriptions, and whether each section carries enough "
          "content.";
      break;
    case FeedbackKind::Formatting:
      kind_instructions =
          "Generate feedback on formatting and presentation. Are there any LaTeX syntax "
          "errors or style violations we can fix? Refer to the style-check output "
          "attachment. Are there short sections (one or two sentences) that could be "
          "combined into a single paragraph?";
      break;
    case FeedbackKind::Figures:
      kind_instructions =
          "Judge each figure's informativeness from the abstract, captions, and images. "
          "Identify figures that are uninformative or make little contribution; those "
          "should be moved to the appendix or removed.";
      break;
    case FeedbackKind::AIReview:
      kind_instructions =
          "Revise the manuscript according to the attached structured review, addressing "
          "the weaknesses the reviewer raises.";
      break;
  }
  prompt.body = kind_instructions + " " + std::string(kNoFabricationClause);
  prompt.attachments.push_back({"structured_summaries", summaries_attachment_text(bundle),
                                std::nullopt});
  prompt.attachments.push_back({"manuscript_sections", sections_json(ms).dump(2), std::nullopt});

  if (kind == FeedbackKind::Formatting) {
    std::string style_output = "(style-check tool output unavailable in this environment)";
    if (!ctx_.config.style_check_command.empty() &&
        fs::exists(ctx_.writing_dir() / "paper.tex")) {
      std::string cmd = "cd '" + ctx_.writing_dir().string() + "' && " +
                        ctx_.config.style_check_command + " paper.tex 2>&1";
      if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
        char buf[4096];
        std::string captured;
        size_t n;
        while ((n = ::fread(buf, 1, sizeof(buf), pipe)) > 0) captured.append(buf, n);
        ::pclose(pipe);
        if (!trim(captured).empty()) style_output = captured;
      }
    }
    prompt.attachments.push_back({"style_check_output", style_output, std::nullopt});
  }
  if (kind == FeedbackKind::Figures) {
    const std::string* abstract = ms.section("Abstract");
    prompt.attachments.push_back({"abstract", abstract ? *abstract : "", std::nullopt});
    prompt.attachments.push_back({"figure_captions", registry_json(ms).dump(2), std::nullopt});
    for (const auto& f : ms.figures)
      if (f.placement != FigurePlacement::Removed)
        prompt.attachments.push_back({"figure:" + f.path, "", ctx_.writing_dir() / f.path});
  }
  return prompt;
}

json WritingEngine::apply_sections_payload(ManuscriptState& ms, const json& payload,
                                           bool allow_figures) const {
  json applied = json::object();
  if (payload.contains("sections") && payload.at("sections").is_object()) {
    for (const auto& [name, text] : payload.at("sections").items()) {
      if (!text.is_string()) continue;
      if (!ms.section(name)) {
        ctx_.warn("revision mentions unknown section '" + name + "'; ignored");
        continue;
      }
      ms.set_section(name, text.get<std::string>());
      applied[name] = true;
    }
  }
  if (allow_figures && payload.contains("figures") && payload.at("figures").is_array()) {
    for (const auto& f : payload.at("figures")) {
      std::string path = f.value("path", "");
      auto placement = placement_from(f.value("placement", ""));
      if (!placement) {
        ctx_.warn("figure revision with invalid placement ignored: " + f.dump());
        continue;
      }
      bool found = false;
      for (auto& fig : ms.figures)
        if (fig.path == path) {
          fig.placement = *placement;
          found = true;
        }
      if (!found) ctx_.warn("figure revision references unknown path: " + path);
    }
  }
  return applied;
}

StructuredReview WritingEngine::generate_review(const ManuscriptState& ms) {
  PromptBundle prompt;
  prompt.role = PromptRole::Review;
  prompt.body =
      "Review the manuscript in the official NeurIPS review format. Return JSON "
      "{\"summary\": ..., \"strengths\": ..., \"weaknesses\": ..., \"scores\": "
      "{\"soundness\": 1-4, \"presentation\": 1-4, \"contribution\": 1-4, \"rating\": "
      "1-10}}.";
  prompt.attachments.push_back({"manuscript", ms.full_source(), std::nullopt});

  for (int attempt = 1; attempt <= 2; ++attempt) {
    std::string raw = retry_transient(ctx_, "review generation", [&] {
      return ctx_.text->complete_text(prompt);
    });
    json payload;
    try {
      payload = parse_json_payload(raw);
    } catch (const InputError&) {
      ctx_.warn("review output not parseable (attempt " + std::to_string(attempt) + ")");
      continue;
    }
    if (!payload.contains("scores") || !payload.at("scores").is_object()) {
      ctx_.warn("review output lacks a scores object (attempt " + std::to_string(attempt) +
                ")");
      continue;
    }
    StructuredReview review;
    review.summary = payload.value("summary", "");
    review.strengths = payload.value("strengths", "");
    review.weaknesses = payload.value("weaknesses", "");
    for (const auto& [name, v] : payload.at("scores").items()) {
      if (!v.is_number()) continue;
      double score = v.get<double>();
      double lo = 1.0, hi = name == "rating" ? 10.0 : 4.0;
      if (score < lo || score > hi) {
        ctx_.warn("review score '" + name + "' outside scale; clamped");
        score = std::min(hi, std::max(lo, score));
      }
      review.scores[name] = score;
    }
    return review;
  }
  throw InputError("review output unparseable after a retry");
}

ManuscriptState WritingEngine::reflect(ManuscriptState ms, FeedbackKind kind, int round,
                                       const ResourceBundle& bundle,
                                       const std::set<std::string>& citable_keys,
                                       FeedbackItem* out_feedback) {
  if (round < 1 || round > ctx_.config.reflection_rounds)
    throw InputError("reflect: round " + std::to_string(round) + " outside [1, " +
                     std::to_string(ctx_.config.reflection_rounds) + "]");
  ManuscriptState before = ms;
  try {
    std::string feedback_text;
    if (kind == FeedbackKind::AIReview) {
      StructuredReview review = generate_review(ms);
      feedback_text = review.to_json().dump(2);
    } else {
      PromptBundle fb_prompt = build_reflection_prompt(kind, ms, bundle);
      feedback_text = retry_transient(ctx_, "reflection feedback", [&] {
        return ctx_.text->complete_text(fb_prompt);
      });
    }

    PromptBundle apply_prompt;
    apply_prompt.role = PromptRole::Reflect;
    apply_prompt.body =
        "Apply the round-" + std::to_string(round) + " " + to_string(kind) +
        " feedback below to the manuscript. Return JSON {\"sections\": {name: revised LaTeX "
        "text}} containing only the sections you changed" +
        std::string(kind == FeedbackKind::Figures
                        ? ", plus \"figures\": [{\"path\", \"placement\"}] with placements "
                          "among Main, Appendix, Removed"
                        : "") +
        ". Cite only verified bibliography keys. " + std::string(kNoFabricationClause);
    apply_prompt.attachments.push_back({"feedback", feedback_text, std::nullopt});
    apply_prompt.attachments.push_back({"manuscript_sections", sections_json(ms).dump(2),
                                        std::nullopt});
    apply_prompt.attachments.push_back({"structured_summaries",
                                        summaries_attachment_text(bundle), std::nullopt});
    if (kind == FeedbackKind::Figures)
      apply_prompt.attachments.push_back({"figure_registry", registry_json(ms).dump(2),
                                          std::nullopt});
    apply_prompt.attachments.push_back(
        {"verified_bibliography_keys",
         join(std::vector<std::string>(citable_keys.begin(), citable_keys.end()), "\n"),
         std::nullopt});

    json payload = parse_json_payload(retry_transient(ctx_, "reflection application", [&] {
      return ctx_.text->complete_text(apply_prompt);
    }));
    apply_sections_payload(ms, payload, kind == FeedbackKind::Figures);

    // Reflections may not introduce citations outside the verified set.
    for (const auto& k : cite_keys(ms.full_source()))
      if (!citable_keys.count(k)) {
        ctx_.warn("reflection introduced unverified citation key '" + k + "'; stripped");
        for (auto& [name, text] : ms.sections) text = replace_cite_key(text, k, std::nullopt);
      }

    ms.commit(RevisionCause::Reflection, kind);
    if (out_feedback) *out_feedback = {kind, feedback_text, round};
    return ms;
  } catch (const Error& e) {
    ctx_.warn("reflection (" + std::string(to_string(kind)) + ", round " +
              std::to_string(round) + ") skipped: " + e.what());
    return before;
  }
}

int WritingEngine::count_pages(ManuscriptState& ms, PageCounter& counter,
                               const std::string& title) {
  render_manuscript(ms, ctx_.config, title, ctx_.writing_dir());
  PageCount pc;
  try {
    pc = counter.count(ctx_.writing_dir(), "paper.tex");
  } catch (const Error& e) {
    ctx_.warn(std::string("page counting failed (") + e.what() +
              "); falling back to the line estimate");
    try {
      EstimatePageCounter estimate(ctx_.config.lines_per_page);
      pc = estimate.count(ctx_.writing_dir(), "paper.tex");
    } catch (const Error& inner) {
      throw FatalError(std::string("both compile and estimate page counting failed: ") +
                       inner.what());
    }
  }
  ms.page_count = std::max(1, pc.pages);
  ms.page_count_estimated = pc.estimated;
  return *ms.page_count;
}

ManuscriptState WritingEngine::adjust_length(ManuscriptState ms, int target_pages,
                                             PageCounter& counter, const std::string& title) {
  if (!ms.page_count) count_pages(ms, counter, title);

  for (int step = 0; step < ctx_.config.max_length_adjust_steps; ++step) {
    int over = *ms.page_count - target_pages;
    if (std::abs(over) <= 1) return ms;
    if (over < 0) {
      ctx_.warn("manuscript is more than a page under target; trimming cannot fix that");
      ms.flags.push_back("under_target_length");
      return ms;
    }
    try {
      PromptBundle prompt;
      prompt.role = PromptRole::Write;
      prompt.body =
          "The manuscript is " + std::to_string(*ms.page_count) + " pages against a target of " +
          std::to_string(target_pages) +
          " (within one page is acceptable). Perform one bounded reduction step: cut "
          "roughly 10-15% of the overflow by condensing verbose passages and removing "
          "redundant material. Return JSON {\"sections\": {name: revised text}} with only "
          "the sections you changed. " + std::string(kNoFabricationClause);
      prompt.attachments.push_back({"manuscript_sections", sections_json(ms).dump(2),
                                    std::nullopt});

      json payload = parse_json_payload(retry_transient(ctx_, "length adjustment", [&] {
        return ctx_.text->complete_text(prompt);
      }));
      ManuscriptState candidate = ms;
      apply_sections_payload(candidate, payload, false);
      count_pages(candidate, counter, title);
      if (*candidate.page_count <= *ms.page_count) {
        candidate.commit(RevisionCause::LengthAdjust);
        ms = std::move(candidate);
      } else {
        ctx_.warn("trim step increased the page count; step discarded");
      }
    } catch (const Error& e) {
      ctx_.warn(std::string("trim step failed: ") + e.what());
    }
  }
  if (std::abs(*ms.page_count - target_pages) > 1) {
    ctx_.warn("page adjustment did not converge within " +
              std::to_string(ctx_.config.max_length_adjust_steps) + " steps; keeping the best "
              "manuscript");
    ms.flags.push_back("length_adjust_nonconvergent");
  }
  return ms;
}

}  // namespace labpilot
