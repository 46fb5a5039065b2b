#include "labpilot/agents.hpp"
#include "labpilot/errors.hpp"
#include "labpilot/mocks.hpp"
#include "support.hpp"

#include <random>

#include <doctest.h>

using namespace labpilot;

namespace {

AgentPolicy make_policy(const fs::path& ws, int turn_limit = 30) {
  AgentPolicy p;
  p.turn_limit = turn_limit;
  p.workspace_root = ws;
  return p;
}

}  // namespace

TEST_CASE("guard_command allow list and deny-by-default") {
  AgentPolicy policy;
  CHECK(guard_command("ls", policy) == CommandDecision::Allow);
  CHECK(guard_command("grep -r pattern .", policy) == CommandDecision::Allow);
  CHECK(guard_command("ls -la subdir", policy) == CommandDecision::Allow);
  CHECK(guard_command("python3 baseline.py", policy) == CommandDecision::Deny);
  CHECK(guard_command("rm -rf /", policy) == CommandDecision::Deny);
  CHECK(guard_command("", policy) == CommandDecision::Deny);

  // the configured run command is only allowed when execution is enabled
  policy.run_command = "python3";
  CHECK(guard_command("python3 baseline.py", policy) == CommandDecision::Deny);
  policy.execution_allowed = true;
  CHECK(guard_command("python3 baseline.py", policy) == CommandDecision::Allow);
  CHECK(guard_command("bash evil.sh", policy) == CommandDecision::Deny);
}

TEST_CASE("guard_command deny-by-default property over random tokens") {
  AgentPolicy policy;
  std::mt19937_64 rng(5);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  for (int i = 0; i < 500; ++i) {
    std::string token;
    for (int k = 0; k < 2 + static_cast<int>(rng() % 8); ++k)
      token += alphabet[rng() % alphabet.size()];
    if (policy.allowed_commands.count(token)) continue;
    CHECK(guard_command(token, policy) == CommandDecision::Deny);
  }
}

TEST_CASE("prompt bundles validate body and attachments") {
  PromptBundle p;
  p.body = "   ";
  CHECK_THROWS_AS(p.validate(), InputError);
  p.body = "do things";
  CHECK_NOTHROW(p.validate());
  p.attachments.push_back({"missing", "", fs::path("/no/such/file")});
  CHECK_THROWS_AS(p.validate(), InputError);
}

TEST_CASE("scripted session completing at turn 5") {
  test::TempDir tmp;
  ScriptedCodingAgent agent;
  SessionScript script;
  for (int i = 0; i < 4; ++i) script.turns.push_back(AgentTurn{{}, std::nullopt, false, "work"});
  AgentTurn last;
  last.complete = true;
  script.turns.push_back(last);
  agent.push_script(script);

  PromptBundle prompt;
  prompt.role = PromptRole::Implement;
  prompt.body = "implement";
  SessionResult r = run_coding_session(agent, prompt, make_policy(tmp.path));
  CHECK(r.turns_used == 5);
  CHECK(r.completed);
  CHECK(r.denied_commands.empty());
}

TEST_CASE("a session that never signals completion exhausts the turn limit") {
  test::TempDir tmp;
  ScriptedCodingAgent agent(test::never_completing_agent());
  PromptBundle prompt;
  prompt.role = PromptRole::Implement;
  prompt.body = "implement";
  SessionResult r = run_coding_session(agent, prompt, make_policy(tmp.path, 30));
  CHECK(r.turns_used == 30);
  CHECK_FALSE(r.completed);
}

TEST_CASE("execution command attempts are denied, recorded, and non-fatal") {
  test::TempDir tmp;
  ScriptedCodingAgent agent;
  SessionScript script;
  AgentTurn t1;
  t1.command = "python3 proposed_method.py";
  script.turns.push_back(t1);
  AgentTurn t2;
  t2.writes.push_back({"notes.txt", "still going"});
  t2.complete = true;
  script.turns.push_back(t2);
  agent.push_script(script);

  PromptBundle prompt;
  prompt.role = PromptRole::Implement;
  prompt.body = "implement";
  SessionResult r = run_coding_session(agent, prompt, make_policy(tmp.path));
  REQUIRE(r.denied_commands.size() == 1);
  CHECK(r.denied_commands[0].first == 1);
  CHECK(r.denied_commands[0].second == "python3 proposed_method.py");
  CHECK(r.completed);  // the session continued past the denial
  CHECK(fs::exists(tmp.path / "notes.txt"));
}

TEST_CASE("file writes are confined to the workspace") {
  test::TempDir tmp;
  fs::create_directories(tmp.path / "ws");
  ScriptedCodingAgent agent;
  SessionScript script;
  AgentTurn t;
  t.writes.push_back({"../escape.txt", "evil"});
  t.writes.push_back({"/tmp/absolute.txt", "evil"});
  t.writes.push_back({"sub/dir/fine.txt", "ok"});
  t.complete = true;
  script.turns.push_back(t);
  agent.push_script(script);

  PromptBundle prompt;
  prompt.role = PromptRole::Implement;
  prompt.body = "implement";
  SessionResult r = run_coding_session(agent, prompt, make_policy(tmp.path / "ws"));
  CHECK(r.denied_commands.size() == 2);
  CHECK_FALSE(fs::exists(tmp.path / "escape.txt"));
  CHECK(fs::exists(tmp.path / "ws" / "sub" / "dir" / "fine.txt"));
  REQUIRE(r.files_written.size() == 1);
  CHECK(r.files_written[0] == "sub/dir/fine.txt");
}

TEST_CASE("session transcript is persisted and referenced") {
  test::TempDir tmp;
  ScriptedCodingAgent agent;
  agent.push_script(SessionScript::write_and_complete("out.txt", "content"));
  PromptBundle prompt;
  prompt.role = PromptRole::Debug;
  prompt.body = "fix it";
  SessionOptions opts;
  opts.transcript_file = tmp.path / "transcript.txt";
  opts.transcript_label = "trials/t1/transcript.txt";
  SessionResult r = run_coding_session(agent, prompt, make_policy(tmp.path), opts);
  CHECK(r.transcript_digest == "trials/t1/transcript.txt");
  std::string transcript = read_file(tmp.path / "transcript.txt");
  CHECK(transcript.find("role=Debug") != std::string::npos);
  CHECK(transcript.find("write out.txt") != std::string::npos);
}

TEST_CASE("replaying the same script reproduces identical session results") {
  auto run_once = [](const fs::path& ws) {
    ScriptedCodingAgent agent;
    SessionScript script;
    AgentTurn a;
    a.command = "ls";
    script.turns.push_back(a);
    AgentTurn b;
    b.command = "python3 x.py";
    b.writes.push_back({"f.txt", "data"});
    script.turns.push_back(b);
    AgentTurn c;
    c.complete = true;
    script.turns.push_back(c);
    agent.push_script(script);
    PromptBundle prompt;
    prompt.role = PromptRole::Implement;
    prompt.body = "implement";
    return run_coding_session(agent, prompt, make_policy(ws));
  };
  test::TempDir t1, t2;
  SessionResult r1 = run_once(t1.path);
  SessionResult r2 = run_once(t2.path);
  CHECK(r1.turns_used == r2.turns_used);
  CHECK(r1.completed == r2.completed);
  CHECK(r1.files_written == r2.files_written);
  CHECK(r1.denied_commands == r2.denied_commands);
}

TEST_CASE("turns_used never exceeds the limit (random scripts)") {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 50; ++iter) {
    test::TempDir tmp;
    ScriptedCodingAgent agent;
    SessionScript script;
    int turns = static_cast<int>(rng() % 40);
    int complete_at = rng() % 3 == 0 ? -1 : static_cast<int>(rng() % (turns + 1));
    for (int i = 0; i < turns; ++i) {
      AgentTurn t;
      if (i == complete_at) t.complete = true;
      script.turns.push_back(t);
    }
    agent.push_script(script);
    PromptBundle prompt;
    prompt.role = PromptRole::Implement;
    prompt.body = "implement";
    int limit = 1 + static_cast<int>(rng() % 35);
    SessionResult r = run_coding_session(agent, prompt, make_policy(tmp.path, limit));
    CHECK(r.turns_used <= limit);
    if (!r.completed) CHECK(r.turns_used == limit);
  }
}

TEST_CASE("scripted text backend replays then reports exhaustion") {
  ScriptedTextBackend text({"A", "B"});
  PromptBundle prompt;
  prompt.role = PromptRole::Write;
  prompt.body = "ask";
  CHECK(text.complete_text(prompt) == "A");
  CHECK(text.complete_text(prompt) == "B");
  CHECK_THROWS_AS(text.complete_text(prompt), TestConfigError);
}

TEST_CASE("scripted coding agent without scripts is a test-configuration error") {
  test::TempDir tmp;
  ScriptedCodingAgent agent;
  PromptBundle prompt;
  prompt.role = PromptRole::Implement;
  prompt.body = "implement";
  CHECK_THROWS_AS(run_coding_session(agent, prompt, make_policy(tmp.path)), TestConfigError);
}
