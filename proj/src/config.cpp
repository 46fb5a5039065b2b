#include "labpilot/config.hpp"

#include "labpilot/errors.hpp"

#include <cstdlib>

namespace labpilot {

using nlohmann::json;

namespace {

int to_int(const std::string& key, const std::string& value) {
  try {
    size_t idx = 0;
    int v = std::stoi(value, &idx);
    if (idx != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw InputError("config: '" + key + "' expects an integer, got '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t idx = 0;
    double v = std::stod(value, &idx);
    if (idx != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw InputError("config: '" + key + "' expects a number, got '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    size_t idx = 0;
    unsigned long long v = std::stoull(value, &idx);
    if (idx != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw InputError("config: '" + key + "' expects an unsigned integer, got '" + value + "'");
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  int line_no = 0;
  for (const auto& raw_line : split(text, '\n')) {
    ++line_no;
    std::string line = raw_line;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));

    if (key == "stage1_iterations") c.stage1_iterations = to_int(key, value);
    else if (key == "stage2_iterations") c.stage2_iterations = to_int(key, value);
    else if (key == "stage1_pool_size") c.stage1_pool_size = to_int(key, value);
    else if (key == "agent_turn_limit") c.agent_turn_limit = to_int(key, value);
    else if (key.rfind("turn_limit_", 0) == 0)
      c.role_turn_limits[key.substr(11)] = to_int(key, value);
    else if (key == "stage2_parent_prob") c.stage2_parent_prob = to_double(key, value);
    else if (key == "target_pages") c.target_pages = to_int(key, value);
    else if (key == "reflection_rounds") c.reflection_rounds = to_int(key, value);
    else if (key == "ablation_sufficiency") c.ablation_sufficiency = to_int(key, value);
    else if (key == "stage3_max_iterations") c.stage3_max_iterations = to_int(key, value);
    else if (key == "script_timeout_s") c.script_timeout_s = to_double(key, value);
    else if (key == "rng_seed") c.rng_seed = to_u64(key, value);
    else if (key == "primary_metric") c.primary_metric = value;
    else if (key == "primary_metric_direction") {
      if (value == "higher") c.primary_metric_direction = MetricDirection::HigherIsBetter;
      else if (value == "lower") c.primary_metric_direction = MetricDirection::LowerIsBetter;
      else throw InputError("config: primary_metric_direction must be 'higher' or 'lower'");
    } else if (key == "run_command") c.run_command = value;
    else if (key == "result_globs") c.result_globs = split_list(value);
    else if (key == "plot_globs") c.plot_globs = split_list(value);
    else if (key == "debug_tail_lines") c.debug_tail_lines = to_int(key, value);
    else if (key == "allowed_commands") c.allowed_commands = split_list(value);
    else if (key == "baseline_entry") c.baseline_entry = value;
    else if (key == "plot_entry") c.plot_entry = value;
    else if (key == "stage1_entry") c.stage1_entry = value;
    else if (key == "stage2_entry") c.stage2_entry = value;
    else if (key == "hyperparam_entry") c.hyperparam_entry = value;
    else if (key == "component_entry") c.component_entry = value;
    else if (key == "idea_count") c.idea_count = to_int(key, value);
    else if (key == "idea_max_refinements") c.idea_max_refinements = to_int(key, value);
    else if (key == "idea_select_index") {
      if (!value.empty()) c.idea_select_index = to_int(key, value);
    } else if (key == "idea_reject_indices") {
      for (const auto& v : split_list(value)) c.idea_reject_indices.push_back(to_int(key, v));
    } else if (key == "section_list") c.section_list = split_list(value);
    else if (key == "max_length_adjust_steps") c.max_length_adjust_steps = to_int(key, value);
    else if (key == "bib_query_budget") c.bib_query_budget = to_int(key, value);
    else if (key == "lines_per_page") c.lines_per_page = to_int(key, value);
    else if (key == "compile_command") c.compile_command = value;
    else if (key == "style_check_command") c.style_check_command = value;
    else if (key == "baseline_bib_key") c.baseline_bib_key = value;
    else if (key == "baseline_title") c.baseline_title = value;
    else if (key == "baseline_authors") c.baseline_authors = value;
    else if (key == "baseline_year") c.baseline_year = value;
    else if (key == "baseline_venue") c.baseline_venue = value;
    else if (key == "baseline_external_id") c.baseline_external_id = value;
    else if (key == "text_backend") c.text_backend = value;
    else if (key == "agent_backend") c.agent_backend = value;
    else if (key == "search_backend") c.search_backend = value;
    else if (key == "llm_endpoint") c.llm_endpoint = value;
    else if (key == "llm_model") c.llm_model = value;
    else if (key == "search_endpoint") c.search_endpoint = value;
    else if (key == "backend_retries") c.backend_retries = to_int(key, value);
    else if (key == "backend_retry_base_ms") c.backend_retry_base_ms = to_int(key, value);
    else
      throw InputError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                       "'");
  }
  c.validate();
  return c;
}

RunConfig parse_config_file(const fs::path& file) {
  return parse_config_text(read_file(file));
}

json config_to_json(const RunConfig& c) {
  json j;
  j["stage1_iterations"] = c.stage1_iterations;
  j["stage2_iterations"] = c.stage2_iterations;
  j["stage1_pool_size"] = c.stage1_pool_size;
  j["agent_turn_limit"] = c.agent_turn_limit;
  j["role_turn_limits"] = c.role_turn_limits;
  j["stage2_parent_prob"] = c.stage2_parent_prob;
  j["target_pages"] = c.target_pages;
  j["reflection_rounds"] = c.reflection_rounds;
  j["ablation_sufficiency"] = c.ablation_sufficiency;
  j["stage3_max_iterations"] = c.stage3_max_iterations;
  j["script_timeout_s"] = c.script_timeout_s;
  j["rng_seed"] = c.rng_seed;
  j["primary_metric"] = c.primary_metric;
  j["primary_metric_direction"] =
      c.primary_metric_direction == MetricDirection::HigherIsBetter ? "higher" : "lower";
  j["run_command"] = c.run_command;
  j["result_globs"] = c.result_globs;
  j["plot_globs"] = c.plot_globs;
  j["debug_tail_lines"] = c.debug_tail_lines;
  j["allowed_commands"] = c.allowed_commands;
  j["baseline_entry"] = c.baseline_entry;
  j["plot_entry"] = c.plot_entry;
  j["stage1_entry"] = c.stage1_entry;
  j["stage2_entry"] = c.stage2_entry;
  j["hyperparam_entry"] = c.hyperparam_entry;
  j["component_entry"] = c.component_entry;
  j["idea_count"] = c.idea_count;
  j["idea_max_refinements"] = c.idea_max_refinements;
  if (c.idea_select_index) j["idea_select_index"] = *c.idea_select_index;
  j["idea_reject_indices"] = c.idea_reject_indices;
  j["section_list"] = c.section_list;
  j["reflection_order"] = c.reflection_order;
  j["max_length_adjust_steps"] = c.max_length_adjust_steps;
  j["bib_query_budget"] = c.bib_query_budget;
  j["lines_per_page"] = c.lines_per_page;
  j["compile_command"] = c.compile_command;
  j["style_check_command"] = c.style_check_command;
  j["baseline_bib_key"] = c.baseline_bib_key;
  j["baseline_title"] = c.baseline_title;
  j["baseline_authors"] = c.baseline_authors;
  j["baseline_year"] = c.baseline_year;
  j["baseline_venue"] = c.baseline_venue;
  j["baseline_external_id"] = c.baseline_external_id;
  j["text_backend"] = c.text_backend;
  j["agent_backend"] = c.agent_backend;
  j["search_backend"] = c.search_backend;
  j["llm_endpoint"] = c.llm_endpoint;
  j["llm_model"] = c.llm_model;
  j["search_endpoint"] = c.search_endpoint;
  j["backend_retries"] = c.backend_retries;
  j["backend_retry_base_ms"] = c.backend_retry_base_ms;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.stage1_iterations = j.value("stage1_iterations", c.stage1_iterations);
  c.stage2_iterations = j.value("stage2_iterations", c.stage2_iterations);
  c.stage1_pool_size = j.value("stage1_pool_size", c.stage1_pool_size);
  c.agent_turn_limit = j.value("agent_turn_limit", c.agent_turn_limit);
  if (j.contains("role_turn_limits"))
    c.role_turn_limits = j.at("role_turn_limits").get<std::map<std::string, int>>();
  c.stage2_parent_prob = j.value("stage2_parent_prob", c.stage2_parent_prob);
  c.target_pages = j.value("target_pages", c.target_pages);
  c.reflection_rounds = j.value("reflection_rounds", c.reflection_rounds);
  c.ablation_sufficiency = j.value("ablation_sufficiency", c.ablation_sufficiency);
  c.stage3_max_iterations = j.value("stage3_max_iterations", c.stage3_max_iterations);
  c.script_timeout_s = j.value("script_timeout_s", c.script_timeout_s);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.primary_metric = j.value("primary_metric", c.primary_metric);
  c.primary_metric_direction = j.value("primary_metric_direction", "higher") == "lower"
                                   ? MetricDirection::LowerIsBetter
                                   : MetricDirection::HigherIsBetter;
  c.run_command = j.value("run_command", c.run_command);
  c.result_globs = j.value("result_globs", c.result_globs);
  c.plot_globs = j.value("plot_globs", c.plot_globs);
  c.debug_tail_lines = j.value("debug_tail_lines", c.debug_tail_lines);
  c.allowed_commands = j.value("allowed_commands", c.allowed_commands);
  c.baseline_entry = j.value("baseline_entry", c.baseline_entry);
  c.plot_entry = j.value("plot_entry", c.plot_entry);
  c.stage1_entry = j.value("stage1_entry", c.stage1_entry);
  c.stage2_entry = j.value("stage2_entry", c.stage2_entry);
  c.hyperparam_entry = j.value("hyperparam_entry", c.hyperparam_entry);
  c.component_entry = j.value("component_entry", c.component_entry);
  c.idea_count = j.value("idea_count", c.idea_count);
  c.idea_max_refinements = j.value("idea_max_refinements", c.idea_max_refinements);
  if (j.contains("idea_select_index")) c.idea_select_index = j.at("idea_select_index").get<int>();
  c.idea_reject_indices = j.value("idea_reject_indices", c.idea_reject_indices);
  c.section_list = j.value("section_list", c.section_list);
  c.reflection_order = j.value("reflection_order", c.reflection_order);
  c.max_length_adjust_steps = j.value("max_length_adjust_steps", c.max_length_adjust_steps);
  c.bib_query_budget = j.value("bib_query_budget", c.bib_query_budget);
  c.lines_per_page = j.value("lines_per_page", c.lines_per_page);
  c.compile_command = j.value("compile_command", c.compile_command);
  c.style_check_command = j.value("style_check_command", c.style_check_command);
  c.baseline_bib_key = j.value("baseline_bib_key", c.baseline_bib_key);
  c.baseline_title = j.value("baseline_title", c.baseline_title);
  c.baseline_authors = j.value("baseline_authors", c.baseline_authors);
  c.baseline_year = j.value("baseline_year", c.baseline_year);
  c.baseline_venue = j.value("baseline_venue", c.baseline_venue);
  c.baseline_external_id = j.value("baseline_external_id", c.baseline_external_id);
  c.text_backend = j.value("text_backend", c.text_backend);
  c.agent_backend = j.value("agent_backend", c.agent_backend);
  c.search_backend = j.value("search_backend", c.search_backend);
  c.llm_endpoint = j.value("llm_endpoint", c.llm_endpoint);
  c.llm_model = j.value("llm_model", c.llm_model);
  c.search_endpoint = j.value("search_endpoint", c.search_endpoint);
  c.backend_retries = j.value("backend_retries", c.backend_retries);
  c.backend_retry_base_ms = j.value("backend_retry_base_ms", c.backend_retry_base_ms);
  c.validate();
  return c;
}

}  // namespace labpilot
