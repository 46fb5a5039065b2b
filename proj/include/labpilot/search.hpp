#pragma once

#include "labpilot/util.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

struct PaperHit {
  std::string title;
  std::string abstract_text;
  std::string venue;
  std::string year;  // empty when the record lacks one
  std::vector<std::string> authors;
  std::string external_id;

  nlohmann::json to_json() const;
  static PaperHit from_json(const nlohmann::json& j);
};

class SearchBackend {
public:
  virtual ~SearchBackend() = default;
  // Relevance-ordered hits; throws TransientError on adapter failure.
  virtual std::vector<PaperHit> search(const std::string& query, int limit) = 0;
  // Papers citing the given work. Optional capability; adapters without it
  // return nothing.
  virtual std::vector<PaperHit> citing(const std::string& work_id, int limit) {
    (void)work_id;
    (void)limit;
    return {};
  }
};

// Disk cache keyed by query hash so reruns and resumes replay the same
// responses without touching the network.
class CachedSearch : public SearchBackend {
public:
  CachedSearch(SearchBackend& inner, fs::path cache_dir);
  std::vector<PaperHit> search(const std::string& query, int limit) override;
  std::vector<PaperHit> citing(const std::string& work_id, int limit) override;

private:
  std::vector<PaperHit> cached(const std::string& cache_key,
                               const std::function<std::vector<PaperHit>()>& fetch);

  SearchBackend& inner_;
  fs::path cache_dir_;
};

// Scholarly-index client speaking the Semantic Scholar graph API shape
// (GET <endpoint>/paper/search?query=...). Plain-HTTP endpoint, typically a
// local proxy; credentials via the LABPILOT_SEARCH_API_KEY variable.
class HttpSearchBackend : public SearchBackend {
public:
  explicit HttpSearchBackend(std::string endpoint);
  std::vector<PaperHit> search(const std::string& query, int limit) override;
  // GET <endpoint>/paper/<id>/citations
  std::vector<PaperHit> citing(const std::string& work_id, int limit) override;

private:
  std::string endpoint_;
};

}  // namespace labpilot
