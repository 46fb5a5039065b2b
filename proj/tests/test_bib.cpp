#include "labpilot/bib.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/mocks.hpp"
#include "support.hpp"

#include <regex>
#include <sstream>

#include <doctest.h>

using namespace labpilot;

namespace {

std::string synthetic_bib(int entries) {
  std::ostringstream out;
  for (int i = 1; i <= entries; ++i)
    out << "@article{key" << i << ",\n"
        << "  title = {Synthetic Title " << i << "},\n"
        << "  author = {Author " << i << "},\n"
        << "  year = {" << 2000 + i << "},\n"
        << "}\n\n";
  return out.str();
}

BibEntry self_entry(const std::string& key = "selfwork2020") {
  BibEntry e;
  e.key = key;
  e.entry_type = "article";
  e.fields["title"] = "The Baseline Work Itself";
  e.fields["author"] = "Self, A.";
  e.fields["year"] = "2020";
  e.provenance = BibProvenance::BaselineSelf;
  return e;
}

// Independent reference scanner used as the oracle for cite_keys.
std::set<std::string> cite_keys_oracle(const std::string& source) {
  std::set<std::string> keys;
  std::regex re(R"(\\cite[a-zA-Z]*\*?\s*(?:\[[^\]]*\]\s*){0,2}\{([^}]*)\})");
  for (auto it = std::sregex_iterator(source.begin(), source.end(), re);
       it != std::sregex_iterator(); ++it) {
    std::istringstream keys_in((*it)[1].str());
    std::string key;
    while (std::getline(keys_in, key, ',')) {
      std::string t = trim(key);
      if (!t.empty()) keys.insert(t);
    }
  }
  return keys;
}

}  // namespace

TEST_CASE("bibtex parser handles braces, quotes, and skipped blocks") {
  WarnSink quiet = [](const std::string&) {};
  std::string src =
      "stray prose outside entries\n"
      "@comment{ignored {nested} stuff}\n"
      "@article{smith2020,\n"
      "  Title = {A {Nested} Title},\n"
      "  author = \"Smith, J.\",\n"
      "  year = 2020,\n"
      "}\n"
      "@inproceedings{doe2021, title={Doe Work}, booktitle={Proc.}, year={2021}}\n";
  auto entries = parse_bibtex(src, quiet);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].key == "smith2020");
  CHECK(entries[0].entry_type == "article");
  CHECK(entries[0].fields.at("title") == "A {Nested} Title");  // field names lowered
  CHECK(entries[0].fields.at("author") == "Smith, J.");
  CHECK(entries[0].year() == "2020");
  CHECK(entries[1].key == "doe2021");
}

TEST_CASE("bibtex parse failure carries a line diagnostic") {
  WarnSink quiet = [](const std::string&) {};
  std::string src = "@article{ok2020, title={Fine}, year={2020}}\n"
                    "@article{broken, title = {never closed\n";
  try {
    parse_bibtex(src, quiet);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
}

TEST_CASE("seeding unions the baseline bib with the self entry") {
  test::TempDir tmp;
  test::WarnCapture warnings;
  fs::path bib_file = tmp.path / "refs.bib";
  fs::path out = tmp.path / "verified.bib";

  SUBCASE("42 baseline entries + self = 43") {
    write_file(bib_file, synthetic_bib(42));
    auto bib = VerifiedBibliography::seed_from_baseline(bib_file, self_entry(), out,
                                                        warnings.sink());
    CHECK(bib.entries().size() == 43);
    CHECK(bib.entries().at("selfwork2020").provenance == BibProvenance::BaselineSelf);
    CHECK(bib.entries().at("key7").provenance == BibProvenance::BaselineBib);
  }

  SUBCASE("self key already present keeps the baseline version") {
    write_file(bib_file, synthetic_bib(42));
    auto bib = VerifiedBibliography::seed_from_baseline(bib_file, self_entry("key5"), out,
                                                        warnings.sink());
    CHECK(bib.entries().size() == 42);
    CHECK(bib.entries().at("key5").provenance == BibProvenance::BaselineBib);
  }

  SUBCASE("empty baseline bib still yields the self entry") {
    write_file(bib_file, "");
    auto bib = VerifiedBibliography::seed_from_baseline(bib_file, self_entry(), out,
                                                        warnings.sink());
    CHECK(bib.entries().size() == 1);
  }
}

TEST_CASE("seeding is idempotent") {
  test::TempDir tmp;
  WarnSink quiet = [](const std::string&) {};
  write_file(tmp.path / "refs.bib", synthetic_bib(5));
  fs::path out = tmp.path / "verified.bib";
  VerifiedBibliography::seed_from_baseline(tmp.path / "refs.bib", self_entry(), out, quiet);
  std::string first = read_file(out);
  VerifiedBibliography::seed_from_baseline(tmp.path / "refs.bib", self_entry(), out, quiet);
  CHECK(read_file(out) == first);
}

TEST_CASE("verify_and_add enforces key freshness and provenance") {
  test::TempDir tmp;
  WarnSink quiet = [](const std::string&) {};
  write_file(tmp.path / "refs.bib", synthetic_bib(2));
  auto bib = VerifiedBibliography::seed_from_baseline(tmp.path / "refs.bib", self_entry(),
                                                      tmp.path / "verified.bib", quiet);

  BibEntry fresh;
  fresh.key = "new2022";
  fresh.entry_type = "article";
  fresh.fields["title"] = "Fresh Paper";
  fresh.fields["year"] = "2022";
  fresh.provenance = BibProvenance::SearchAPI;
  fresh.retrieval_query = "fresh paper";
  fresh.retrieved_at = "2022-01-01T00:00:00Z";
  CHECK(bib.verify_and_add(fresh));
  CHECK(bib.entries().size() == 4);

  // same key, same title: no-op
  CHECK_FALSE(bib.verify_and_add(fresh));
  CHECK(bib.entries().size() == 4);

  // same key, different title: conflict for manual resolution
  BibEntry clash = fresh;
  clash.fields["title"] = "A Completely Different Paper";
  CHECK_THROWS_AS(bib.verify_and_add(clash), ConflictError);

  // baseline provenance may not enter through this door
  BibEntry wrong = fresh;
  wrong.key = "other2022";
  wrong.provenance = BibProvenance::BaselineBib;
  CHECK_THROWS_AS(bib.verify_and_add(wrong), InputError);
}

TEST_CASE("the on-disk verified file tracks every mutation") {
  test::TempDir tmp;
  WarnSink quiet = [](const std::string&) {};
  write_file(tmp.path / "refs.bib", synthetic_bib(3));
  auto bib = VerifiedBibliography::seed_from_baseline(tmp.path / "refs.bib", self_entry(),
                                                      tmp.path / "verified.bib", quiet);
  for (int i = 0; i < 3; ++i) {
    BibEntry e;
    e.key = "added" + std::to_string(i);
    e.entry_type = "misc";
    e.fields["title"] = "Added " + std::to_string(i);
    e.fields["year"] = "2021";
    e.provenance = BibProvenance::SearchAPI;
    bib.verify_and_add(e);
    auto reloaded = VerifiedBibliography::load(tmp.path / "verified.bib", quiet);
    CHECK(reloaded.keys() == bib.keys());
    CHECK(reloaded.entries().at(e.key).provenance == BibProvenance::SearchAPI);
  }
}

TEST_CASE("fetch_entry builds entries only from response fields") {
  test::WarnCapture warnings;

  SUBCASE("one record becomes an entry with the title verbatim") {
    PaperHit hit;
    hit.title = "Exactly This Title";
    hit.year = "2019";
    hit.authors = {"Grace Hopper"};
    hit.venue = "CACM";
    ScriptedSearchBackend search(std::vector<PaperHit>{hit});
    auto entry = fetch_entry("query", search, warnings.sink());
    REQUIRE(entry.has_value());
    CHECK(entry->fields.at("title") == "Exactly This Title");
    CHECK(entry->provenance == BibProvenance::SearchAPI);
    CHECK(entry->retrieval_query == "query");
    CHECK(entry->key == "hopper2019exactly");
  }

  SUBCASE("zero hits yields none") {
    ScriptedSearchBackend search(std::vector<PaperHit>{});
    CHECK_FALSE(fetch_entry("query", search, warnings.sink()).has_value());
  }

  SUBCASE("a record missing its year is rejected with a warning") {
    PaperHit hit;
    hit.title = "No Year Given";
    ScriptedSearchBackend search(std::vector<PaperHit>{hit});
    CHECK_FALSE(fetch_entry("query", search, warnings.sink()).has_value());
    CHECK(warnings.contains("lacks a year"));
  }
}

TEST_CASE("cite_keys basics") {
  CHECK(cite_keys("see \\cite{a} and \\cite{b} and again \\cite{a}") ==
        std::set<std::string>{"a", "b"});
  CHECK(cite_keys("no citations here").empty());
  CHECK(cite_keys("multi \\citep{a,b,c}") == std::set<std::string>{"a", "b", "c"});
  CHECK(cite_keys("optional \\citep[see][p. 3]{x, y}") == std::set<std::string>{"x", "y"});
}

TEST_CASE("cite_keys agrees with the reference parser over a 20-citation fixture") {
  std::string fixture =
      "Intro \\cite{alpha} text \\citep{beta,gamma} more \\citet{delta}\n"
      "\\citet*{epsilon} and \\citep[see][]{zeta , eta}\n"
      "\\cite {theta} spaced, \\citep{iota}\\citep{kappa}\n"
      "broken \\cite lambda} not a citation\n"
      "\\citeauthor{mu} \\citeyear{nu} \\citep{xi,omicron,pi}\n"
      "\\citep[p. 5]{rho} \\cite{sigma}\n"
      "tail \\citet{tau, upsilon} \\cite{phi}";
  auto ours = cite_keys(fixture);
  auto oracle = cite_keys_oracle(fixture);
  CHECK(ours == oracle);
  CHECK(ours.size() == 20);
}

TEST_CASE("stray bib files are quarantined") {
  test::TempDir tmp;
  test::WarnCapture warnings;
  write_file(tmp.path / "writing" / "verified.bib", "@misc{k, title={T}, year={2020}}\n");
  write_file(tmp.path / "writing" / "agent_made.bib", "@misc{fake, title={F}}\n");
  auto quarantined = quarantine_stray_bibs(tmp.path / "writing",
                                           tmp.path / "writing" / "verified.bib",
                                           warnings.sink());
  REQUIRE(quarantined.size() == 1);
  CHECK_FALSE(fs::exists(tmp.path / "writing" / "agent_made.bib"));
  CHECK(fs::exists(tmp.path / "writing" / "agent_made.bib.quarantined"));
  CHECK(fs::exists(tmp.path / "writing" / "verified.bib"));
  CHECK(warnings.contains("quarantined"));
}
