#include "labpilot/controller.hpp"
#include "labpilot/demo.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/json_util.hpp"
#include "support.hpp"

#include <cstdlib>
#include <fstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <doctest.h>

using namespace labpilot;
using nlohmann::json;

namespace {

#ifndef LABPILOT_CLI_PATH
#define LABPILOT_CLI_PATH "labpilot"
#endif

struct CliResult {
  int exit_code = -1;
  std::string output;  // combined stdout + stderr
};

CliResult run_cli(const std::string& args, const fs::path& scratch,
                  const std::string& env = "") {
  fs::path out = scratch / ("cli-out-" + std::to_string(::getpid()) + ".log");
  std::string cmd = env + " " + std::string(LABPILOT_CLI_PATH) + " " + args + " > '" +
                    out.string() + "' 2>&1";
  int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  if (fs::exists(out)) r.output = read_file(out);
  return r;
}

struct DemoProject {
  test::TempDir tmp;
  fs::path base;

  DemoProject() : base(tmp.path / "proj") { write_demo_baseline(base); }

  std::string init_args(const std::string& run_name = "run") const {
    return "init --baseline " + (base / "baseline").string() + " --paper " +
           (base / "paper").string() + " --config " + (base / "config.cfg").string() +
           " --run " + (base / run_name).string();
  }
  fs::path run_dir(const std::string& run_name = "run") const { return base / run_name; }
};

}  // namespace

TEST_CASE("init scaffolds a run directory and refuses to run twice") {
  DemoProject p;
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  CHECK(fs::exists(p.run_dir() / "manifest.json"));
  CHECK(fs::exists(p.run_dir() / "journal"));
  CHECK(fs::exists(p.run_dir() / "workspace" / "baseline.py"));
  json manifest = read_json_file(p.run_dir() / "manifest.json");
  CHECK(manifest.at("phases").at("idea") == "pending");
  CHECK(manifest.at("baseline_fingerprint").get<std::string>().size() == 16);

  CHECK_THROWS_AS(
      init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir()),
      InputError);
}

TEST_CASE("init validation names every missing input") {
  DemoProject p;
  fs::remove(p.base / "baseline" / "plot.py");
  try {
    init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("plot.py") != std::string::npos);
  }
}

TEST_CASE("cli: init failure exits 2 and names the missing file") {
  DemoProject p;
  fs::remove(p.base / "baseline" / "plot.py");
  CliResult r = run_cli(p.init_args(), p.tmp.path);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("plot.py") != std::string::npos);
}

TEST_CASE("cli: requesting write before experiment is a refusal") {
  DemoProject p;
  CliResult init = run_cli(p.init_args(), p.tmp.path);
  REQUIRE(init.exit_code == 0);
  CliResult r = run_cli("run " + p.run_dir().string() + " --phases write", p.tmp.path);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("requires completed") != std::string::npos);
}

TEST_CASE("cli: unknown phase names are rejected") {
  DemoProject p;
  REQUIRE(run_cli(p.init_args(), p.tmp.path).exit_code == 0);
  CliResult r = run_cli("run " + p.run_dir().string() + " --phases nonsense", p.tmp.path);
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: a fatal pipeline error exits 3 and journals FatalError last") {
  DemoProject p;
  // a baseline that exits nonzero is a fatal configuration error
  write_file(p.base / "baseline" / "baseline.py", "#!/bin/sh\nexit 1\n");
  REQUIRE(run_cli(p.init_args(), p.tmp.path).exit_code == 0);
  CliResult r = run_cli("run " + p.run_dir().string(), p.tmp.path);
  CHECK(r.exit_code == 3);
  RunJournal journal(p.run_dir() / "journal");
  REQUIRE_FALSE(journal.events().empty());
  CHECK(journal.events().back().type == "FatalError");
}

TEST_CASE("cli: phased execution, status, resume no-op, and report") {
  DemoProject p;
  REQUIRE(run_cli(p.init_args(), p.tmp.path).exit_code == 0);

  CliResult idea = run_cli("run " + p.run_dir().string() + " --phases idea", p.tmp.path);
  CHECK(idea.exit_code == 0);
  CliResult status1 = run_cli("status " + p.run_dir().string(), p.tmp.path);
  CHECK(status1.output.find("\"idea\": \"complete\"") != std::string::npos);
  CHECK(status1.output.find("\"experiment\": \"pending\"") != std::string::npos);

  CliResult rest =
      run_cli("run " + p.run_dir().string() + " --phases experiment,write", p.tmp.path);
  CHECK(rest.exit_code == 0);

  CliResult resume = run_cli("resume " + p.run_dir().string(), p.tmp.path);
  CHECK(resume.exit_code == 0);
  CHECK(resume.output.find("nothing to resume") != std::string::npos);

  CliResult report = run_cli("report " + p.run_dir().string(), p.tmp.path);
  CHECK(report.exit_code == 0);
  CHECK(fs::exists(p.run_dir() / "report" / "report.json"));

  // report is regenerable and deterministic for a fixed journal
  std::string first = read_file(p.run_dir() / "report" / "report.json");
  REQUIRE(run_cli("report " + p.run_dir().string(), p.tmp.path).exit_code == 0);
  CHECK(read_file(p.run_dir() / "report" / "report.json") == first);
}

TEST_CASE("cli: report before any phase completes is a validation failure") {
  DemoProject p;
  REQUIRE(run_cli(p.init_args(), p.tmp.path).exit_code == 0);
  CliResult r = run_cli("report " + p.run_dir().string(), p.tmp.path);
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: the run lock is exclusive per run directory") {
  DemoProject p;
  REQUIRE(run_cli(p.init_args(), p.tmp.path).exit_code == 0);
  int fd = ::open((p.run_dir() / "lock").c_str(), O_RDWR | O_CREAT, 0644);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
  CliResult r = run_cli("run " + p.run_dir().string(), p.tmp.path);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("lock") != std::string::npos);
  ::flock(fd, LOCK_UN);
  ::close(fd);
}

TEST_CASE("controller: artifact index only references existing files") {
  DemoProject p;
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  Controller::Options opts;
  opts.run_dir = p.run_dir();
  Controller controller(opts);
  controller.run_phases({"idea", "experiment", "write"});
  controller.generate_report();
  json manifest = read_json_file(p.run_dir() / "manifest.json");
  REQUIRE(manifest.at("artifacts").size() > 5);
  for (const auto& rel : manifest.at("artifacts"))
    CHECK(fs::exists(p.run_dir() / rel.get<std::string>()));
}

TEST_CASE("controller: journal tail corruption is recovered with a warning") {
  DemoProject p;
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  {
    Controller::Options opts;
    opts.run_dir = p.run_dir();
    Controller controller(opts);
    controller.run_phases({"idea"});
  }
  {
    std::ofstream out(p.run_dir() / "journal", std::ios::app | std::ios::binary);
    out << "00000000 {\"seq\": torn";
  }
  Controller::Options opts;
  opts.run_dir = p.run_dir();
  Controller controller(opts);  // recovery happens on open
  bool warned = false;
  for (const auto& ev : controller.journal().events())
    if (ev.type == "Warning" &&
        ev.data.value("message", "").find("truncated") != std::string::npos)
      warned = true;
  CHECK(warned);
  CHECK(controller.phase_complete("idea"));
  // and the run continues normally afterwards
  controller.run_phases({"experiment"});
  CHECK(controller.phase_complete("experiment"));
}

TEST_CASE("controller: kill at a journal boundary, resume, and finish") {
  DemoProject p;
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  {
    Controller::Options opts;
    opts.run_dir = p.run_dir();
    opts.crash_after_events = 25;
    Controller controller(opts);
    bool crashed = false;
    try {
      controller.run_phases({"idea", "experiment", "write"});
    } catch (const CrashInjected& c) {
      crashed = true;
      CHECK(c.seq >= 25);
    }
    REQUIRE(crashed);
  }
  std::uint64_t after_crash;
  {
    RunJournal probe(p.run_dir() / "journal");
    after_crash = probe.last_seq();
    CHECK(after_crash >= 25);
  }
  Controller::Options opts;
  opts.run_dir = p.run_dir();
  Controller controller(opts);
  controller.resume();
  CHECK(controller.phase_complete("idea"));
  CHECK(controller.phase_complete("experiment"));
  CHECK(controller.phase_complete("write"));

  // committed trials were not re-executed: trial keys are unique in the journal
  std::map<std::string, int> seen;
  for (const auto& ev : controller.journal().events())
    if (ev.type == "TrialCommitted") seen[ev.key]++;
  for (const auto& [key, count] : seen) CHECK(count == 1);
}

TEST_CASE("controller: an experiment-only run reports trials and metrics only") {
  DemoProject p;
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  Controller::Options opts;
  opts.run_dir = p.run_dir();
  Controller controller(opts);
  controller.run_phases({"idea", "experiment"});
  json report = controller.generate_report();
  CHECK(report.at("trials").size() > 0);
  CHECK(report.at("tables").empty());
  CHECK(report.at("figures").empty());
}

TEST_CASE("controller: the configured reject list skips ideas during selection") {
  DemoProject p;
  // reject the first idea; the demo backend's ideas are all Distinct
  std::string config = read_file(p.base / "config.cfg");
  write_file(p.base / "config.cfg", config + "idea_reject_indices = 1\n");
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  Controller::Options opts;
  opts.run_dir = p.run_dir();
  Controller controller(opts);
  controller.run_phases({"idea"});
  json selected = read_json_file(p.run_dir() / "ideas" / "selected.json");
  CHECK(selected.value("id", "") == "idea-2");
  // selection invariant: the accepted idea is Distinct
  CHECK(selected.value("novelty", "") == "Distinct");
}

namespace {

// Journal lines with volatile fields (timestamps, checksums) stripped.
std::vector<std::string> normalized_journal(const fs::path& file) {
  std::vector<std::string> out;
  RunJournal journal(file);
  for (const auto& ev : journal.events()) {
    json j{{"seq", ev.seq}, {"type", ev.type}, {"key", ev.key}, {"data", ev.data}};
    if (j.at("data").is_object()) j["data"].erase("timestamp");
    out.push_back(j.dump());
  }
  return out;
}

}  // namespace

TEST_CASE("controller: blocked reflection scheduling groups rounds by kind") {
  DemoProject p;
  std::string config = read_file(p.base / "config.cfg");
  write_file(p.base / "config.cfg", config + "reflection_order = blocked\n");
  init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir());
  Controller::Options opts;
  opts.run_dir = p.run_dir();
  Controller controller(opts);
  controller.run_phases({"idea", "experiment", "write"});

  // reflection units must appear kind-major in the journal
  std::vector<std::string> reflect_keys;
  for (const auto& ev : controller.journal().events())
    if (ev.key.rfind("write/reflect/", 0) == 0) reflect_keys.push_back(ev.key);
  REQUIRE(reflect_keys.size() == 12);
  CHECK(reflect_keys[0] == "write/reflect/r1/LogicalConsistency");
  CHECK(reflect_keys[1] == "write/reflect/r2/LogicalConsistency");
  CHECK(reflect_keys[2] == "write/reflect/r3/LogicalConsistency");
  CHECK(reflect_keys[3] == "write/reflect/r1/Formatting");
  CHECK(reflect_keys[11] == "write/reflect/r3/AIReview");
}

TEST_CASE("controller: identical inputs and seed produce identical journals modulo timestamps") {
  DemoProject p;
  for (const char* name : {"run-a", "run-b"}) {
    init_run(p.base / "baseline", p.base / "paper", p.base / "config.cfg", p.run_dir(name));
    Controller::Options opts;
    opts.run_dir = p.run_dir(name);
    Controller controller(opts);
    controller.run_phases({"idea", "experiment", "write"});
  }
  auto a = normalized_journal(p.run_dir("run-a") / "journal");
  auto b = normalized_journal(p.run_dir("run-b") / "journal");
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("cli: scaffold-demo produces a ready-to-run sample project") {
  test::TempDir tmp;
  CliResult r = run_cli("scaffold-demo " + (tmp.path / "sample").string(), tmp.path);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(tmp.path / "sample" / "baseline" / "baseline.py"));
  CHECK(fs::exists(tmp.path / "sample" / "paper" / "refs.bib"));
  CHECK(fs::exists(tmp.path / "sample" / "config.cfg"));
}
