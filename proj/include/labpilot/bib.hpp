#pragma once

#include "labpilot/search.hpp"
#include "labpilot/util.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace labpilot {

enum class BibProvenance { BaselineBib, BaselineSelf, SearchAPI };

const char* to_string(BibProvenance p);

struct BibEntry {
  std::string key;
  std::string entry_type;  // article, inproceedings, misc, ...
  std::map<std::string, std::string> fields;
  BibProvenance provenance = BibProvenance::BaselineBib;
  std::string retrieval_query;  // SearchAPI entries only
  std::string retrieved_at;

  std::string title() const;
  std::string year() const;
  // Non-empty title and year.
  bool well_formed() const;
};

// Parses BibTeX source; throws InputError with a line diagnostic on damage.
// @comment/@preamble/@string blocks are skipped.
std::vector<BibEntry> parse_bibtex(const std::string& text, const WarnSink& warn);
std::string render_bibtex(const std::vector<BibEntry>& entries);

// Every key referenced by a \cite-family command in `latex_source`,
// multi-key commands included.
std::set<std::string> cite_keys(const std::string& latex_source);

// The single citable reference set. Every mutation rewrites the on-disk file
// atomically so the file and the in-memory map never diverge.
class VerifiedBibliography {
public:
  // Baseline entries plus the baseline's own citation entry; key collisions
  // keep the baseline-bib version. Idempotent over re-seeding.
  static VerifiedBibliography seed_from_baseline(const fs::path& baseline_bib,
                                                 const BibEntry& baseline_self_entry,
                                                 const fs::path& out_file,
                                                 const WarnSink& warn);
  static VerifiedBibliography load(const fs::path& file, const WarnSink& warn);

  // Adds a SearchAPI/BaselineSelf entry under a fresh key. Same key + same
  // title is a no-op; same key + different title raises ConflictError.
  // Returns whether the bibliography changed.
  bool verify_and_add(const BibEntry& entry);

  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  const std::map<std::string, BibEntry>& entries() const { return entries_; }
  const fs::path& file_path() const { return file_path_; }
  std::set<std::string> keys() const;

private:
  void rewrite() const;

  std::map<std::string, BibEntry> entries_;
  fs::path file_path_;
};

// Best-match bibliography record for `query`, or nullopt. Fields come from
// the response only; records lacking a title or year are rejected.
std::optional<BibEntry> fetch_entry(const std::string& query, SearchBackend& search,
                                    const WarnSink& warn);

// Agent-created .bib files are never consulted; any bib file under `dir`
// other than the verified one is renamed aside. Returns quarantined paths.
std::vector<std::string> quarantine_stray_bibs(const fs::path& dir, const fs::path& keep,
                                               const WarnSink& warn);

}  // namespace labpilot
