#pragma once

#include "labpilot/util.hpp"

#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

enum class ExitKind { Success, Failure, Timeout, SpawnError };

struct ExitStatus {
  ExitKind kind = ExitKind::SpawnError;
  int code = 0;

  bool success() const { return kind == ExitKind::Success; }
};

std::string to_string(const ExitStatus& s);

// Workspace-relative paths of fresh artifacts, one list per glob family.
struct ArtifactReport {
  std::vector<std::string> result_files;
  std::vector<std::string> plot_files;

  nlohmann::json to_json() const;
  static ArtifactReport from_json(const nlohmann::json& j);
};

struct ExecutionRecord {
  std::string command;
  ExitStatus exit_status;
  std::string stdout_path;
  std::string stderr_path;
  double duration_s = 0.0;
  int pid = 0;
  ArtifactReport artifacts;

  nlohmann::json to_json() const;
  static ExecutionRecord from_json(const nlohmann::json& j);
};

struct WorkspaceReport {
  bool ok = false;
  std::vector<std::string> missing;
};

// ok iff every required entry exists as a readable regular file directly in
// the workspace. A missing workspace directory is an input error.
WorkspaceReport validate_workspace(const fs::path& workspace,
                                   const std::vector<std::string>& required_entries);

struct ExecOptions {
  std::string run_command = "python3";
  double timeout_s = 3600.0;
  std::vector<std::string> result_globs;
  std::vector<std::string> plot_globs;
  fs::path stdout_file;
  fs::path stderr_file;
};

// Runs `run_command entry_file` with the workspace as working directory.
// Streams are captured to files (created even when empty), the process group
// is killed and reaped on timeout, and artifacts are scanned after exit with
// the spawn instant as the freshness cutoff.
ExecutionRecord execute_entry(const fs::path& workspace, const std::string& entry_file,
                              const ExecOptions& opts);

// Files under `workspace` matching a glob and modified at/after `since`.
ArtifactReport detect_artifacts(const fs::path& workspace,
                                const std::vector<std::string>& result_globs,
                                const std::vector<std::string>& plot_globs,
                                fs::file_time_type since);

// Bounded text block for debugging prompts: command, exit status, and the
// last `tail_lines` lines of each captured stream.
std::string build_debug_feedback(const ExecutionRecord& record, int tail_lines);

}  // namespace labpilot
