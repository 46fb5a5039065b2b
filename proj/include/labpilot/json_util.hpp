#pragma once

#include "labpilot/errors.hpp"
#include "labpilot/util.hpp"

#include <string>

#include <json.hpp>

namespace labpilot {

// Extracts the first JSON object/array embedded in backend output. Models
// often wrap payloads in prose; anything before the first bracket and after
// its matching close is ignored.
inline nlohmann::json parse_json_payload(const std::string& text) {
  size_t start = text.find_first_of("[{");
  if (start == std::string::npos)
    throw InputError("no JSON payload found in backend output");
  char open = text[start];
  char close = open == '[' ? ']' : '}';
  int depth = 0;
  bool in_string = false;
  for (size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\')
        ++i;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (c == open) ++depth;
    if (c == close) {
      --depth;
      if (depth == 0) {
        nlohmann::json j = nlohmann::json::parse(text.substr(start, i - start + 1), nullptr,
                                                 /*allow_exceptions=*/false);
        if (j.is_discarded()) throw InputError("malformed JSON payload in backend output");
        return j;
      }
    }
  }
  throw InputError("unterminated JSON payload in backend output");
}

inline nlohmann::json read_json_file(const fs::path& p) {
  nlohmann::json j = nlohmann::json::parse(read_file(p), nullptr, false);
  if (j.is_discarded()) throw InputError("malformed JSON file: " + p.string());
  return j;
}

inline void write_json_file(const fs::path& p, const nlohmann::json& j) {
  atomic_write_file(p, j.dump(2) + "\n");
}

}  // namespace labpilot
