#pragma once

#include "labpilot/core.hpp"

#include <string>

#include <json.hpp>

namespace labpilot {

// Run configuration file: one `key = value` per line, `#` comments, list
// values comma-separated. Keys mirror the RunConfig field names; unknown keys
// are an input error so typos do not silently fall back to defaults.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const fs::path& file);

// Snapshot round-trip for the run manifest.
nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

}  // namespace labpilot
