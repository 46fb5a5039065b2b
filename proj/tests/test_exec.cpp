#include "labpilot/core.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/exec.hpp"
#include "support.hpp"

#include <cerrno>
#include <chrono>
#include <csignal>
#include <thread>

#include <doctest.h>

using namespace labpilot;

namespace {

ExecOptions sh_options(const test::TempDir& tmp, double timeout_s = 20.0) {
  ExecOptions opts;
  opts.run_command = "sh";
  opts.timeout_s = timeout_s;
  opts.result_globs = {"results/**.json"};
  opts.plot_globs = {"figures/**.png"};
  opts.stdout_file = tmp.path / "cap" / "stdout.log";
  opts.stderr_file = tmp.path / "cap" / "stderr.log";
  return opts;
}

void set_mtime_past(const fs::path& p) {
  fs::last_write_time(p, fs::file_time_type::clock::now() - std::chrono::hours(1));
}

}  // namespace

TEST_CASE("validate_workspace reports exactly the missing entries") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  fs::create_directories(ws);

  auto empty = validate_workspace(ws, {"baseline.py", "plot.py"});
  CHECK_FALSE(empty.ok);
  CHECK(empty.missing == std::vector<std::string>{"baseline.py", "plot.py"});

  write_file(ws / "baseline.py", "echo hi\n");
  auto partial = validate_workspace(ws, {"baseline.py", "plot.py"});
  CHECK_FALSE(partial.ok);
  CHECK(partial.missing == std::vector<std::string>{"plot.py"});

  write_file(ws / "plot.py", "echo plot\n");
  auto ok = validate_workspace(ws, {"baseline.py", "plot.py"});
  CHECK(ok.ok);
  CHECK(ok.missing.empty());

  CHECK_THROWS_AS(validate_workspace(tmp.path / "missing", {"x"}), InputError);
}

TEST_CASE("execute_entry success captures artifacts and streams") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  write_file(ws / "entry.py",
             "mkdir -p results\n"
             "echo '{\"auroc\": 90.0}' > results/out.json\n"
             "echo finished\n");
  ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp));
  CHECK(rec.exit_status.kind == ExitKind::Success);
  CHECK(rec.artifacts.result_files == std::vector<std::string>{"results/out.json"});
  CHECK(read_file(rec.stdout_path).find("finished") != std::string::npos);
  CHECK(fs::exists(rec.stderr_path));  // exists even when empty
}

TEST_CASE("execute_entry failure captures stderr and exit code") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  write_file(ws / "entry.py", "echo boom 1>&2\nexit 1\n");
  ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp));
  CHECK(rec.exit_status.kind == ExitKind::Failure);
  CHECK(rec.exit_status.code == 1);
  CHECK(read_file(rec.stderr_path).find("boom") != std::string::npos);
  CHECK(rec.artifacts.result_files.empty());
}

TEST_CASE("execute_entry kills and reaps a sleeping script at the timeout") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  // the sleep script is the oracle: it would run 10 s if the timeout did not fire
  write_file(ws / "entry.py", "echo starting\nsleep 10\necho never\n");
  ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp, 2.0));
  CHECK(rec.exit_status.kind == ExitKind::Timeout);
  CHECK(rec.duration_s >= 2.0);
  CHECK(rec.duration_s < 8.0);
  CHECK(read_file(rec.stdout_path).find("never") == std::string::npos);

  // no live child after return
  REQUIRE(rec.pid > 0);
  bool gone = ::kill(rec.pid, 0) == -1 && errno == ESRCH;
  CHECK(gone);
}

TEST_CASE("spawn failure is reported as SpawnError") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  write_file(ws / "entry.py", "echo hi\n");
  ExecOptions opts = sh_options(tmp);
  opts.run_command = "definitely-not-a-command-zz";
  ExecutionRecord rec = execute_entry(ws, "entry.py", opts);
  CHECK(rec.exit_status.kind == ExitKind::SpawnError);
}

TEST_CASE("artifact detection enforces the freshness rule") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  write_file(ws / "results" / "stale.json", "{}");
  set_mtime_past(ws / "results" / "stale.json");

  SUBCASE("stale pre-existing result only -> empty report") {
    auto report = detect_artifacts(ws, {"results/**.json"}, {"figures/**.png"},
                                   fs::file_time_type::clock::now());
    CHECK(report.result_files.empty());
    CHECK(report.plot_files.empty());
  }

  SUBCASE("fresh result and fresh image are both detected") {
    auto since = fs::file_time_type::clock::now();
    write_file(ws / "results" / "fresh.json", "{}");
    write_file(ws / "figures" / "fresh.png", "png");
    auto report = detect_artifacts(ws, {"results/**.json"}, {"figures/**.png"}, since);
    CHECK(report.result_files == std::vector<std::string>{"results/fresh.json"});
    CHECK(report.plot_files == std::vector<std::string>{"figures/fresh.png"});
  }
}

TEST_CASE("classification over executed fixtures matches the truth table") {
  struct Fixture {
    const char* script;
    bool result_expected;
    bool plot_expected;
  };
  const Fixture fixtures[] = {
      {"mkdir -p results figures\necho '{}' > results/r.json\necho x > figures/p.png\n", true,
       true},
      {"mkdir -p results\necho '{}' > results/r.json\n", true, false},
      {"mkdir -p figures\necho x > figures/p.png\n", false, true},
      {"echo nothing\n", false, false},
  };
  for (const auto& f : fixtures) {
    test::TempDir tmp;
    fs::path ws = tmp.path / "ws";
    // stale artifacts of both kinds must not leak into the classification
    write_file(ws / "results" / "stale.json", "{}");
    write_file(ws / "figures" / "stale.png", "png");
    set_mtime_past(ws / "results" / "stale.json");
    set_mtime_past(ws / "figures" / "stale.png");
    write_file(ws / "entry.py", f.script);

    ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp));
    NodeStatus status =
        classify_trial(!rec.artifacts.result_files.empty(), !rec.artifacts.plot_files.empty());
    CHECK(status == classify_trial(f.result_expected, f.plot_expected));
  }
}

TEST_CASE("artifact paths never escape the workspace") {
  test::TempDir tmp;
  fs::path ws = tmp.path / "ws";
  write_file(ws / "entry.py",
             "mkdir -p results/deep\n"
             "echo '{}' > results/deep/a.json\n"
             "echo '{}' > results/b.json\n");
  ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp));
  for (const auto& rel : rec.artifacts.result_files) {
    CHECK(rel.find("..") == std::string::npos);
    CHECK(path_within(ws, ws / rel));
    CHECK(fs::exists(ws / rel));
  }
}

TEST_CASE("debug feedback carries the stream tails") {
  test::TempDir tmp;
  SUBCASE("long stderr is tail-bounded") {
    fs::path ws = tmp.path / "ws";
    write_file(ws / "entry.py",
               "i=1\nwhile [ $i -le 1000 ]; do echo \"err line $i\" 1>&2; i=$((i+1)); done\n"
               "exit 3\n");
    ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp));
    std::string feedback = build_debug_feedback(rec, 50);
    CHECK(feedback.find("err line 1000") != std::string::npos);
    CHECK(feedback.find("err line 951") != std::string::npos);
    CHECK(feedback.find("err line 950\n") == std::string::npos);
    CHECK(feedback.find("Failure(code 3)") != std::string::npos);
  }
  SUBCASE("empty streams are stated, not omitted") {
    fs::path ws = tmp.path / "ws";
    write_file(ws / "entry.py", "exit 0\n");
    ExecutionRecord rec = execute_entry(ws, "entry.py", sh_options(tmp));
    std::string feedback = build_debug_feedback(rec, 50);
    CHECK(feedback.find("(stdout was empty)") != std::string::npos);
    CHECK(feedback.find("(stderr was empty)") != std::string::npos);
  }
  SUBCASE("timeouts are named with their duration") {
    ExecutionRecord rec;
    rec.command = "sh entry.py";
    rec.exit_status = {ExitKind::Timeout, 0};
    rec.duration_s = 2.5;
    std::string feedback = build_debug_feedback(rec, 10);
    CHECK(feedback.find("Timeout") != std::string::npos);
    CHECK(feedback.find("2.5") != std::string::npos);
  }
}

TEST_CASE("in-process runner mirrors the harness semantics") {
  test::TempDir tmp;
  RunConfig config = test::test_config();
  InProcessRunner runner(
      [&](const fs::path&, const std::string& entry) -> InProcessRunner::ScriptFn {
        if (entry == "good.py") return test::write_metrics_fn("{\"auroc\": \"91.0\"}");
        if (entry == "bad.py") return test::fail_fn("broken");
        return nullptr;
      },
      config);
  fs::path ws = tmp.path / "ws";
  fs::create_directories(ws);

  ExecutionRecord good = runner.run(ws, "good.py", tmp.path / "o1.log", tmp.path / "e1.log");
  CHECK(good.exit_status.kind == ExitKind::Success);
  CHECK(good.artifacts.result_files == std::vector<std::string>{"results/metrics.json"});

  ExecutionRecord bad = runner.run(ws, "bad.py", tmp.path / "o2.log", tmp.path / "e2.log");
  CHECK(bad.exit_status.kind == ExitKind::Failure);
  CHECK(read_file(tmp.path / "e2.log").find("broken") != std::string::npos);

  ExecutionRecord unknown = runner.run(ws, "nope.py", tmp.path / "o3.log", tmp.path / "e3.log");
  CHECK(unknown.exit_status.kind == ExitKind::SpawnError);
}
