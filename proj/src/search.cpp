#include "labpilot/search.hpp"

#include "labpilot/errors.hpp"

namespace labpilot {

nlohmann::json PaperHit::to_json() const {
  return {{"title", title},       {"abstract", abstract_text}, {"venue", venue},
          {"year", year},         {"authors", authors},        {"external_id", external_id}};
}

PaperHit PaperHit::from_json(const nlohmann::json& j) {
  PaperHit h;
  h.title = j.value("title", "");
  h.abstract_text = j.value("abstract", "");
  h.venue = j.value("venue", "");
  h.year = j.value("year", "");
  if (j.contains("authors")) h.authors = j.at("authors").get<std::vector<std::string>>();
  h.external_id = j.value("external_id", "");
  return h;
}

CachedSearch::CachedSearch(SearchBackend& inner, fs::path cache_dir)
    : inner_(inner), cache_dir_(std::move(cache_dir)) {
  fs::create_directories(cache_dir_);
}

std::vector<PaperHit> CachedSearch::cached(const std::string& cache_key,
                                           const std::function<std::vector<PaperHit>()>& fetch) {
  fs::path file = cache_dir_ / (hex64(fnv1a64(cache_key)) + ".json");
  if (fs::exists(file)) {
    nlohmann::json j = nlohmann::json::parse(read_file(file));
    std::vector<PaperHit> hits;
    for (const auto& h : j) hits.push_back(PaperHit::from_json(h));
    return hits;
  }
  auto hits = fetch();
  nlohmann::json j = nlohmann::json::array();
  for (const auto& h : hits) j.push_back(h.to_json());
  atomic_write_file(file, j.dump(2));
  return hits;
}

std::vector<PaperHit> CachedSearch::search(const std::string& query, int limit) {
  return cached("search\x1f" + query + "\x1f" + std::to_string(limit),
                [&] { return inner_.search(query, limit); });
}

std::vector<PaperHit> CachedSearch::citing(const std::string& work_id, int limit) {
  return cached("citing\x1f" + work_id + "\x1f" + std::to_string(limit),
                [&] { return inner_.citing(work_id, limit); });
}

}  // namespace labpilot
