#include "labpilot/controller.hpp"
#include "labpilot/demo.hpp"
#include "labpilot/errors.hpp"

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitFatal = 3;
constexpr int kExitCrashInjected = 70;

std::uint64_t crash_after_from_env() {
  const char* v = std::getenv("LABPILOT_CRASH_AFTER_EVENTS");
  if (!v || !*v) return 0;
  return std::strtoull(v, nullptr, 10);
}

int guarded(const std::function<int()>& body, labpilot::Controller* controller) {
  try {
    return body();
  } catch (const labpilot::CrashInjected& crash) {
    std::cerr << "crash injected after journal event " << crash.seq << "\n";
    return kExitCrashInjected;
  } catch (const labpilot::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const labpilot::Error& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    if (controller) {
      try {
        controller->record_fatal(e.what());
      } catch (...) {
        // journaling the failure is best effort
      }
    }
    return kExitFatal;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return kExitFatal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"labpilot: baseline-extension research runs driven by pluggable agents"};
  app.require_subcommand(1);

  std::string baseline_dir, paper_dir, config_file, run_dir;
  std::vector<std::string> phases{"idea", "experiment", "write"};

  auto* init = app.add_subcommand("init", "Scaffold a run directory from prepared inputs");
  init->add_option("--baseline", baseline_dir, "Baseline codebase directory")->required();
  init->add_option("--paper", paper_dir, "Paper sources directory (text, .bib, template/)")
      ->required();
  init->add_option("--config", config_file, "Run configuration file")->required();
  init->add_option("--run", run_dir, "Run directory to create")->required();

  auto* run = app.add_subcommand("run", "Execute pipeline phases");
  run->add_option("run_dir", run_dir, "Run directory")->required();
  run->add_option("--phases", phases, "Subset of phases: idea experiment write")
      ->delimiter(',');

  auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
  resume->add_option("run_dir", run_dir, "Run directory")->required();

  auto* status = app.add_subcommand("status", "Show phase statuses");
  status->add_option("run_dir", run_dir, "Run directory")->required();

  auto* report = app.add_subcommand("report", "Regenerate the provenance report");
  report->add_option("run_dir", run_dir, "Run directory")->required();

  auto* scaffold = app.add_subcommand("scaffold-demo",
                                      "Write a self-contained sample project for a dry run");
  scaffold->add_option("dir", baseline_dir, "Target directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (init->parsed()) {
    return guarded(
        [&] {
          labpilot::init_run(baseline_dir, paper_dir, config_file, run_dir);
          std::cout << "initialized run directory: " << run_dir << "\n";
          return kExitOk;
        },
        nullptr);
  }

  if (scaffold->parsed()) {
    return guarded(
        [&] {
          labpilot::write_demo_baseline(baseline_dir);
          std::cout << "demo project written to " << baseline_dir << "\n"
                    << "next: labpilot init --baseline " << baseline_dir << "/baseline"
                    << " --paper " << baseline_dir << "/paper"
                    << " --config " << baseline_dir << "/config.cfg"
                    << " --run " << baseline_dir << "/run\n";
          return kExitOk;
        },
        nullptr);
  }

  // The remaining verbs operate on an existing run directory.
  std::unique_ptr<labpilot::Controller> controller;
  int rc = guarded(
      [&] {
        labpilot::Controller::Options opts;
        opts.run_dir = run_dir;
        if (run->parsed() || resume->parsed())
          opts.crash_after_events = crash_after_from_env();
        controller = std::make_unique<labpilot::Controller>(opts);
        return kExitOk;
      },
      nullptr);
  if (rc != kExitOk) return rc;

  if (run->parsed()) {
    return guarded(
        [&] {
          controller->run_phases(phases);
          std::cout << controller->status().dump(2) << "\n";
          return kExitOk;
        },
        controller.get());
  }
  if (resume->parsed()) {
    return guarded(
        [&] {
          controller->resume();
          std::cout << controller->status().dump(2) << "\n";
          return kExitOk;
        },
        controller.get());
  }
  if (status->parsed()) {
    return guarded(
        [&] {
          std::cout << controller->status().dump(2) << "\n";
          return kExitOk;
        },
        nullptr);
  }
  if (report->parsed()) {
    return guarded(
        [&] {
          auto r = controller->generate_report();
          std::cout << "report written: " << (run_dir + "/report/report.json") << " ("
                    << r.value("tables", nlohmann::json::array()).size() << " tables, "
                    << r.value("figures", nlohmann::json::array()).size() << " figures)\n";
          return kExitOk;
        },
        nullptr);
  }
  return kExitOk;
}
