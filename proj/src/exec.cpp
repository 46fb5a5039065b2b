#include "labpilot/exec.hpp"

#include "labpilot/errors.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace labpilot {

std::string to_string(const ExitStatus& s) {
  switch (s.kind) {
    case ExitKind::Success: return "Success";
    case ExitKind::Failure: return "Failure(code " + std::to_string(s.code) + ")";
    case ExitKind::Timeout: return "Timeout";
    case ExitKind::SpawnError: return "SpawnError(errno " + std::to_string(s.code) + ")";
  }
  return "SpawnError";
}

nlohmann::json ArtifactReport::to_json() const {
  return {{"result_files", result_files}, {"plot_files", plot_files}};
}

ArtifactReport ArtifactReport::from_json(const nlohmann::json& j) {
  ArtifactReport r;
  if (j.contains("result_files"))
    r.result_files = j.at("result_files").get<std::vector<std::string>>();
  if (j.contains("plot_files")) r.plot_files = j.at("plot_files").get<std::vector<std::string>>();
  return r;
}

nlohmann::json ExecutionRecord::to_json() const {
  const char* kind = "SpawnError";
  switch (exit_status.kind) {
    case ExitKind::Success: kind = "Success"; break;
    case ExitKind::Failure: kind = "Failure"; break;
    case ExitKind::Timeout: kind = "Timeout"; break;
    case ExitKind::SpawnError: kind = "SpawnError"; break;
  }
  return {{"command", command},
          {"exit_kind", kind},
          {"exit_code", exit_status.code},
          {"stdout_path", stdout_path},
          {"stderr_path", stderr_path},
          {"duration_s", duration_s},
          {"artifacts", artifacts.to_json()}};
}

ExecutionRecord ExecutionRecord::from_json(const nlohmann::json& j) {
  ExecutionRecord r;
  r.command = j.value("command", "");
  std::string kind = j.value("exit_kind", "SpawnError");
  if (kind == "Success") r.exit_status.kind = ExitKind::Success;
  else if (kind == "Failure") r.exit_status.kind = ExitKind::Failure;
  else if (kind == "Timeout") r.exit_status.kind = ExitKind::Timeout;
  else r.exit_status.kind = ExitKind::SpawnError;
  r.exit_status.code = j.value("exit_code", 0);
  r.stdout_path = j.value("stdout_path", "");
  r.stderr_path = j.value("stderr_path", "");
  r.duration_s = j.value("duration_s", 0.0);
  if (j.contains("artifacts")) r.artifacts = ArtifactReport::from_json(j.at("artifacts"));
  return r;
}

WorkspaceReport validate_workspace(const fs::path& workspace,
                                   const std::vector<std::string>& required_entries) {
  if (!fs::is_directory(workspace))
    throw InputError("workspace directory missing: " + workspace.string());
  WorkspaceReport report;
  for (const auto& name : required_entries) {
    fs::path p = workspace / name;
    bool present = fs::is_regular_file(p) && ::access(p.c_str(), R_OK) == 0;
    if (!present) report.missing.push_back(name);
  }
  std::sort(report.missing.begin(), report.missing.end());
  report.ok = report.missing.empty();
  return report;
}

namespace {

int open_capture_file(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw InputError("cannot open capture file: " + p.string());
  return fd;
}

// File mtimes come from the kernel's coarse clock, which can lag the precise
// clock by a tick. Spin a probe file until its timestamp advances so that
// everything written before this call is strictly older than the fence.
fs::file_time_type strict_time_fence(const fs::path& scratch_dir) {
  std::error_code ec;
  fs::create_directories(scratch_dir, ec);
  fs::path probe = scratch_dir / ".tick";
  write_file(probe, "t");
  auto first = fs::last_write_time(probe);
  for (int i = 0; i < 100000; ++i) {
    write_file(probe, "t");
    auto now = fs::last_write_time(probe);
    if (now > first) return now;
  }
  return first;
}

bool still_running(pid_t pid, int* status, bool* exited) {
  pid_t r = ::waitpid(pid, status, WNOHANG);
  if (r == 0) return true;
  *exited = (r == pid);
  return false;
}

}  // namespace

ExecutionRecord execute_entry(const fs::path& workspace, const std::string& entry_file,
                              const ExecOptions& opts) {
  using clock = std::chrono::steady_clock;

  ExecutionRecord record;
  record.command = opts.run_command + " " + entry_file;
  record.stdout_path = opts.stdout_file.generic_string();
  record.stderr_path = opts.stderr_file.generic_string();

  fs::file_time_type since = strict_time_fence(
      opts.stdout_file.has_parent_path() ? opts.stdout_file.parent_path() : workspace);

  int out_fd = open_capture_file(opts.stdout_file);
  int err_fd = open_capture_file(opts.stderr_file);

  // Pipe reports exec failure back from the child (close-on-exec).
  int errpipe[2];
  if (::pipe(errpipe) != 0) {
    ::close(out_fd);
    ::close(err_fd);
    throw FatalError("pipe() failed");
  }
  ::fcntl(errpipe[1], F_SETFD, FD_CLOEXEC);

  auto start = clock::now();
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(out_fd);
    ::close(err_fd);
    ::close(errpipe[0]);
    ::close(errpipe[1]);
    record.exit_status = {ExitKind::SpawnError, errno};
    record.artifacts = detect_artifacts(workspace, opts.result_globs, opts.plot_globs, since);
    return record;
  }

  if (pid == 0) {
    ::setpgid(0, 0);  // own process group, so timeout kills descendants too
    ::close(errpipe[0]);
    if (::chdir(workspace.c_str()) != 0 || ::dup2(out_fd, STDOUT_FILENO) < 0 ||
        ::dup2(err_fd, STDERR_FILENO) < 0) {
      int e = errno;
      (void)!::write(errpipe[1], &e, sizeof(e));
      ::_exit(127);
    }
    ::execlp(opts.run_command.c_str(), opts.run_command.c_str(), entry_file.c_str(),
             static_cast<char*>(nullptr));
    int e = errno;
    (void)!::write(errpipe[1], &e, sizeof(e));
    ::_exit(127);
  }

  ::close(out_fd);
  ::close(err_fd);
  ::close(errpipe[1]);
  record.pid = pid;

  int spawn_errno = 0;
  ssize_t n = ::read(errpipe[0], &spawn_errno, sizeof(spawn_errno));
  ::close(errpipe[0]);

  auto deadline = start + std::chrono::duration_cast<clock::duration>(
                              std::chrono::duration<double>(opts.timeout_s));
  int status = 0;
  bool exited = false;
  bool timed_out = false;
  while (still_running(pid, &status, &exited)) {
    if (clock::now() >= deadline) {
      timed_out = true;
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);  // reap; never leave a zombie behind
      exited = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }

  record.duration_s = std::chrono::duration<double>(clock::now() - start).count();

  if (n == static_cast<ssize_t>(sizeof(spawn_errno)) && spawn_errno != 0) {
    record.exit_status = {ExitKind::SpawnError, spawn_errno};
  } else if (timed_out) {
    record.exit_status = {ExitKind::Timeout, 0};
  } else if (exited && WIFEXITED(status)) {
    int code = WEXITSTATUS(status);
    record.exit_status = code == 0 ? ExitStatus{ExitKind::Success, 0}
                                   : ExitStatus{ExitKind::Failure, code};
  } else if (exited && WIFSIGNALED(status)) {
    record.exit_status = {ExitKind::Failure, 128 + WTERMSIG(status)};
  } else {
    record.exit_status = {ExitKind::Failure, -1};
  }

  record.artifacts = detect_artifacts(workspace, opts.result_globs, opts.plot_globs, since);
  return record;
}

ArtifactReport detect_artifacts(const fs::path& workspace,
                                const std::vector<std::string>& result_globs,
                                const std::vector<std::string>& plot_globs,
                                fs::file_time_type since) {
  ArtifactReport report;
  if (!fs::is_directory(workspace)) return report;
  for (const auto& e : fs::recursive_directory_iterator(workspace)) {
    if (!e.is_regular_file()) continue;
    if (e.last_write_time() < since) continue;
    std::string rel = e.path().lexically_relative(workspace).generic_string();
    for (const auto& g : result_globs) {
      if (glob_match(g, rel)) {
        report.result_files.push_back(rel);
        break;
      }
    }
    for (const auto& g : plot_globs) {
      if (glob_match(g, rel)) {
        report.plot_files.push_back(rel);
        break;
      }
    }
  }
  std::sort(report.result_files.begin(), report.result_files.end());
  std::sort(report.plot_files.begin(), report.plot_files.end());
  return report;
}

std::string build_debug_feedback(const ExecutionRecord& record, int tail) {
  std::ostringstream out;
  out << "command: " << record.command << "\n";
  out << "exit: " << to_string(record.exit_status);
  if (record.exit_status.kind == ExitKind::Timeout)
    out << " (timed out after " << record.duration_s << " s)";
  out << "\n";

  auto dump_stream = [&](const char* label, const std::string& path) {
    out << "--- " << label << " (last " << tail << " lines) ---\n";
    std::string text;
    if (!path.empty() && fs::exists(path)) text = read_file(path);
    if (trim(text).empty()) {
      out << "(" << label << " was empty)\n";
      return;
    }
    for (const auto& line : tail_lines(text, tail)) out << line << "\n";
  };
  dump_stream("stdout", record.stdout_path);
  dump_stream("stderr", record.stderr_path);
  return out.str();
}

}  // namespace labpilot
