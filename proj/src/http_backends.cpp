// Live HTTP adapters. Everything here sits behind the same interfaces the
// scripted and demo backends implement, so none of it is needed for tests.

#include "labpilot/agents.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/http_backends.hpp"
#include "labpilot/search.hpp"

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

namespace labpilot {

namespace {

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

// Splits "http://host:port/base" into client target + path prefix.
struct Endpoint {
  std::string host_port;
  std::string base_path;
};

Endpoint parse_endpoint(const std::string& url) {
  std::string rest = url;
  auto scheme = rest.find("://");
  if (scheme != std::string::npos) {
    if (rest.substr(0, scheme) == "https")
      throw InputError("https endpoints are not supported by this build; "
                       "point the adapter at an http endpoint or local proxy: " + url);
    rest = rest.substr(scheme + 3);
  }
  Endpoint ep;
  auto slash = rest.find('/');
  if (slash == std::string::npos) {
    ep.host_port = rest;
  } else {
    ep.host_port = rest.substr(0, slash);
    ep.base_path = rest.substr(slash);
  }
  if (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  return ep;
}

}  // namespace

HttpSearchBackend::HttpSearchBackend(std::string endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.empty()) throw InputError("search endpoint not configured");
}

namespace {

PaperHit hit_from_record(const nlohmann::json& item) {
  PaperHit h;
  h.title = item.value("title", "");
  if (item.contains("abstract") && item["abstract"].is_string())
    h.abstract_text = item["abstract"].get<std::string>();
  h.venue = item.value("venue", "");
  if (item.contains("year") && item["year"].is_number_integer())
    h.year = std::to_string(item["year"].get<int>());
  if (item.contains("authors"))
    for (const auto& a : item["authors"]) h.authors.push_back(a.value("name", ""));
  if (item.contains("externalIds") && item["externalIds"].contains("DOI"))
    h.external_id = item["externalIds"]["DOI"].get<std::string>();
  return h;
}

std::vector<PaperHit> fetch_hit_page(const std::string& endpoint, const std::string& path,
                                     const httplib::Params& params) {
  Endpoint ep = parse_endpoint(endpoint);
  httplib::Client client(ep.host_port);
  client.set_read_timeout(30, 0);
  httplib::Headers headers;
  std::string api_key = env_or_empty("LABPILOT_SEARCH_API_KEY");
  if (!api_key.empty()) headers.emplace("x-api-key", api_key);

  auto res = client.Get(ep.base_path + path, params, headers);
  if (!res || res->status != 200)
    throw TransientError("literature search request failed: " + endpoint +
                         (res ? " status " + std::to_string(res->status) : " (no response)"));

  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw TransientError("literature search returned malformed JSON");

  std::vector<PaperHit> hits;
  for (const auto& item : j.value("data", nlohmann::json::array())) {
    // citation records nest the paper under "citingPaper"
    const nlohmann::json& record =
        item.contains("citingPaper") ? item.at("citingPaper") : item;
    hits.push_back(hit_from_record(record));
  }
  return hits;
}

}  // namespace

std::vector<PaperHit> HttpSearchBackend::search(const std::string& query, int limit) {
  httplib::Params params{{"query", query},
                         {"limit", std::to_string(limit)},
                         {"fields", "title,abstract,venue,year,authors,externalIds"}};
  return fetch_hit_page(endpoint_, "/paper/search", params);
}

std::vector<PaperHit> HttpSearchBackend::citing(const std::string& work_id, int limit) {
  httplib::Params params{{"limit", std::to_string(limit)},
                         {"fields", "title,abstract,venue,year,authors,externalIds"}};
  return fetch_hit_page(endpoint_, "/paper/" + work_id + "/citations", params);
}

HttpTextBackend::HttpTextBackend(std::string endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {
  if (endpoint_.empty()) throw InputError("llm endpoint not configured");
}

std::string HttpTextBackend::complete_text(const PromptBundle& prompt) {
  prompt.validate();
  Endpoint ep = parse_endpoint(endpoint_);
  httplib::Client client(ep.host_port);
  client.set_read_timeout(120, 0);

  nlohmann::json body{
      {"model", model_},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt.render()}}})}};

  httplib::Headers headers;
  std::string api_key = env_or_empty("LABPILOT_LLM_API_KEY");
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  auto res = client.Post(ep.base_path + "/chat/completions", headers, body.dump(),
                         "application/json");
  if (!res || res->status != 200)
    throw TransientError("llm request failed: " + endpoint_ +
                         (res ? " status " + std::to_string(res->status) : " (no response)"));

  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw TransientError("llm returned malformed JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw TransientError("llm response missing choices[0].message.content");
  }
}

}  // namespace labpilot
