#include "labpilot/bib.hpp"

#include "labpilot/errors.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace labpilot {

const char* to_string(BibProvenance p) {
  switch (p) {
    case BibProvenance::BaselineBib: return "BaselineBib";
    case BibProvenance::BaselineSelf: return "BaselineSelf";
    case BibProvenance::SearchAPI: return "SearchAPI";
  }
  return "BaselineBib";
}

namespace {

std::optional<BibProvenance> provenance_from(const std::string& s) {
  if (s == "BaselineBib") return BibProvenance::BaselineBib;
  if (s == "BaselineSelf") return BibProvenance::BaselineSelf;
  if (s == "SearchAPI") return BibProvenance::SearchAPI;
  return std::nullopt;
}

// Minimal BibTeX tokenizer; enough for real-world reference files while
// reporting the line of the first thing it cannot make sense of.
class BibParser {
public:
  BibParser(const std::string& text, const WarnSink& warn) : s_(text), warn_(warn) {}

  std::vector<BibEntry> parse() {
    std::vector<BibEntry> out;
    while (!eof()) {
      if (peek() != '@') {
        advance();
        continue;
      }
      advance();  // '@'
      std::string type = to_lower(read_name());
      if (type.empty()) fail("expected entry type after '@'");
      if (type == "comment" || type == "preamble" || type == "string") {
        if (type == "string") warn_("bibtex @string macros are ignored");
        skip_balanced_block();
        continue;
      }
      out.push_back(read_entry(type));
    }
    return out;
  }

private:
  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return s_[i_]; }
  void advance() {
    if (s_[i_] == '\n') ++line_;
    ++i_;
  }
  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) advance();
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw InputError("bibtex parse error at line " + std::to_string(line_) + ": " + msg);
  }
  void expect(char c) {
    skip_ws();
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  std::string read_name() {
    skip_ws();
    std::string name;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                      peek() == '-')) {
      name += peek();
      advance();
    }
    return name;
  }

  void skip_balanced_block() {
    skip_ws();
    if (eof() || peek() != '{') return;  // tolerate line comments
    int depth = 0;
    do {
      if (peek() == '{') ++depth;
      if (peek() == '}') --depth;
      advance();
    } while (!eof() && depth > 0);
  }

  std::string read_braced() {
    // caller consumed '{'
    std::string value;
    int depth = 1;
    while (!eof()) {
      char c = peek();
      if (c == '{') ++depth;
      if (c == '}') {
        --depth;
        if (depth == 0) {
          advance();
          return value;
        }
      }
      value += c;
      advance();
    }
    fail("unterminated braced value");
  }

  std::string read_quoted() {
    // caller consumed '"'
    std::string value;
    int depth = 0;
    while (!eof()) {
      char c = peek();
      if (c == '{') ++depth;
      if (c == '}') --depth;
      if (c == '"' && depth == 0) {
        advance();
        return value;
      }
      value += c;
      advance();
    }
    fail("unterminated quoted value");
  }

  std::string read_value() {
    skip_ws();
    if (eof()) fail("expected field value");
    char c = peek();
    if (c == '{') {
      advance();
      return read_braced();
    }
    if (c == '"') {
      advance();
      return read_quoted();
    }
    std::string bare;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                      std::string_view("._-+:/").find(peek()) != std::string_view::npos)) {
      bare += peek();
      advance();
    }
    if (bare.empty()) fail("expected field value");
    return bare;
  }

  BibEntry read_entry(const std::string& type) {
    BibEntry entry;
    entry.entry_type = type;
    expect('{');
    skip_ws();
    std::string key;
    while (!eof() && peek() != ',' && peek() != '}' &&
           !std::isspace(static_cast<unsigned char>(peek()))) {
      key += peek();
      advance();
    }
    if (key.empty()) fail("entry has no citation key");
    entry.key = key;
    skip_ws();
    if (!eof() && peek() == '}') {
      advance();
      return entry;
    }
    expect(',');
    while (true) {
      skip_ws();
      if (eof()) fail("unterminated entry '" + key + "'");
      if (peek() == '}') {
        advance();
        break;
      }
      std::string name = to_lower(read_name());
      if (name.empty()) fail("expected field name in entry '" + key + "'");
      expect('=');
      std::string value = read_value();
      entry.fields[name] = trim(value);
      skip_ws();
      if (!eof() && peek() == ',') {
        advance();
        continue;
      }
      if (!eof() && peek() == '}') {
        advance();
        break;
      }
      fail("expected ',' or '}' after field '" + name + "'");
    }
    return entry;
  }

  const std::string& s_;
  WarnSink warn_;
  size_t i_ = 0;
  int line_ = 1;
};

}  // namespace

std::string BibEntry::title() const {
  auto it = fields.find("title");
  return it == fields.end() ? "" : trim(it->second);
}

std::string BibEntry::year() const {
  auto it = fields.find("year");
  return it == fields.end() ? "" : trim(it->second);
}

bool BibEntry::well_formed() const { return !title().empty() && !year().empty(); }

std::vector<BibEntry> parse_bibtex(const std::string& text, const WarnSink& warn) {
  BibParser parser(text, warn);
  auto entries = parser.parse();
  for (auto& e : entries) {
    // Provenance metadata round-trips through ordinary fields.
    auto it = e.fields.find("provenance");
    if (it != e.fields.end()) {
      if (auto p = provenance_from(it->second)) e.provenance = *p;
      e.fields.erase(it);
    }
    if (auto q = e.fields.find("retrievalquery"); q != e.fields.end()) {
      e.retrieval_query = q->second;
      e.fields.erase(q);
    }
    if (auto r = e.fields.find("retrievedat"); r != e.fields.end()) {
      e.retrieved_at = r->second;
      e.fields.erase(r);
    }
  }
  return entries;
}

std::string render_bibtex(const std::vector<BibEntry>& entries) {
  std::ostringstream out;
  for (const auto& e : entries) {
    out << "@" << e.entry_type << "{" << e.key << ",\n";
    for (const auto& [name, value] : e.fields)
      out << "  " << name << " = {" << value << "},\n";
    out << "  provenance = {" << to_string(e.provenance) << "},\n";
    if (!e.retrieval_query.empty())
      out << "  retrievalquery = {" << e.retrieval_query << "},\n";
    if (!e.retrieved_at.empty()) out << "  retrievedat = {" << e.retrieved_at << "},\n";
    out << "}\n\n";
  }
  return out.str();
}

std::set<std::string> cite_keys(const std::string& latex_source) {
  std::set<std::string> keys;
  size_t pos = 0;
  const std::string& s = latex_source;
  while ((pos = s.find("\\cite", pos)) != std::string::npos) {
    size_t i = pos + 5;
    while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) ++i;  // citep, citet, ...
    if (i < s.size() && s[i] == '*') ++i;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    // optional arguments, e.g. \citep[see][p. 3]{key}
    for (int opt = 0; opt < 2 && i < s.size() && s[i] == '['; ++opt) {
      size_t close = s.find(']', i);
      if (close == std::string::npos) break;
      i = close + 1;
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    }
    if (i >= s.size() || s[i] != '{') {
      pos = i;
      continue;
    }
    size_t close = s.find('}', i);
    if (close == std::string::npos) break;
    for (const auto& k : split_list(s.substr(i + 1, close - i - 1))) keys.insert(k);
    pos = close + 1;
  }
  return keys;
}

VerifiedBibliography VerifiedBibliography::seed_from_baseline(const fs::path& baseline_bib,
                                                              const BibEntry& self_entry,
                                                              const fs::path& out_file,
                                                              const WarnSink& warn) {
  VerifiedBibliography bib;
  bib.file_path_ = out_file;
  auto parsed = parse_bibtex(read_file(baseline_bib), warn);
  for (auto& e : parsed) {
    if (!e.well_formed()) {
      warn("baseline bib entry '" + e.key + "' lacks title or year; skipped");
      continue;
    }
    e.provenance = BibProvenance::BaselineBib;
    if (!bib.entries_.emplace(e.key, e).second)
      warn("duplicate key in baseline bib: " + e.key);
  }
  if (bib.entries_.count(self_entry.key)) {
    // Baseline-bib version wins; it is the most trusted provenance.
    warn("baseline self entry key '" + self_entry.key + "' already present; keeping bib version");
  } else {
    BibEntry self = self_entry;
    self.provenance = BibProvenance::BaselineSelf;
    if (!self.well_formed())
      throw InputError("baseline self entry needs title and year (key '" + self.key + "')");
    bib.entries_.emplace(self.key, std::move(self));
  }
  bib.rewrite();
  return bib;
}

VerifiedBibliography VerifiedBibliography::load(const fs::path& file, const WarnSink& warn) {
  VerifiedBibliography bib;
  bib.file_path_ = file;
  for (auto& e : parse_bibtex(read_file(file), warn)) bib.entries_.emplace(e.key, std::move(e));
  return bib;
}

bool VerifiedBibliography::verify_and_add(const BibEntry& entry) {
  if (entry.provenance == BibProvenance::BaselineBib)
    throw InputError("verify_and_add only accepts SearchAPI or BaselineSelf entries");
  if (!entry.well_formed())
    throw InputError("entry '" + entry.key + "' lacks title or year");
  auto it = entries_.find(entry.key);
  if (it != entries_.end()) {
    if (to_lower(trim(it->second.title())) == to_lower(trim(entry.title()))) return false;
    throw ConflictError("key '" + entry.key + "' already maps to a different title: \"" +
                        it->second.title() + "\" vs \"" + entry.title() + "\"");
  }
  entries_.emplace(entry.key, entry);
  rewrite();
  return true;
}

std::set<std::string> VerifiedBibliography::keys() const {
  std::set<std::string> out;
  for (const auto& [k, _] : entries_) out.insert(k);
  return out;
}

void VerifiedBibliography::rewrite() const {
  std::vector<BibEntry> sorted;
  sorted.reserve(entries_.size());
  for (const auto& [_, e] : entries_) sorted.push_back(e);
  atomic_write_file(file_path_, render_bibtex(sorted));
}

namespace {

std::string key_token(const std::string& s) {
  std::string out;
  for (char c : to_lower(s)) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += c;
    if (out.size() >= 12) break;
  }
  return out;
}

}  // namespace

std::optional<BibEntry> fetch_entry(const std::string& query, SearchBackend& search,
                                    const WarnSink& warn) {
  if (trim(query).empty()) throw InputError("fetch_entry: query must be non-empty");
  auto hits = search.search(query, 5);
  if (hits.empty()) return std::nullopt;
  const PaperHit& hit = hits.front();
  if (trim(hit.title).empty()) {
    warn("search hit for \"" + query + "\" lacks a title; rejected");
    return std::nullopt;
  }
  if (trim(hit.year).empty()) {
    warn("search hit \"" + hit.title + "\" lacks a year; rejected");
    return std::nullopt;
  }

  BibEntry entry;
  entry.entry_type = hit.venue.empty() ? "misc" : "article";
  entry.fields["title"] = hit.title;
  entry.fields["year"] = hit.year;
  if (!hit.authors.empty()) entry.fields["author"] = join(hit.authors, " and ");
  if (!hit.venue.empty()) entry.fields["journal"] = hit.venue;
  if (!hit.external_id.empty()) entry.fields["note"] = hit.external_id;

  std::string author_part = hit.authors.empty() ? "anon" : key_token(split(hit.authors[0], ' ').back());
  std::string title_words = key_token(split(hit.title, ' ').front());
  entry.key = author_part + hit.year + title_words;
  entry.provenance = BibProvenance::SearchAPI;
  entry.retrieval_query = query;
  entry.retrieved_at = iso_timestamp_now();
  return entry;
}

std::vector<std::string> quarantine_stray_bibs(const fs::path& dir, const fs::path& keep,
                                               const WarnSink& warn) {
  std::vector<std::string> quarantined;
  if (!fs::is_directory(dir)) return quarantined;
  fs::path keep_norm = fs::absolute(keep).lexically_normal();
  std::vector<fs::path> strays;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".bib") continue;
    if (fs::absolute(e.path()).lexically_normal() == keep_norm) continue;
    strays.push_back(e.path());
  }
  std::sort(strays.begin(), strays.end());
  for (const auto& p : strays) {
    fs::path aside = p;
    aside += ".quarantined";
    fs::rename(p, aside);
    warn("stray bib file quarantined (only the verified file is citable): " +
         p.generic_string());
    quarantined.push_back(aside.generic_string());
  }
  return quarantined;
}

}  // namespace labpilot
