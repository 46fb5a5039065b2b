#pragma once

#include "labpilot/util.hpp"

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace labpilot {

// ---- policy ---------------------------------------------------------------

// Command policy and budget for one coding-agent session. File writes are
// confined to workspace_root; commands are deny-by-default.
struct AgentPolicy {
  std::set<std::string> allowed_commands = {"ls", "grep"};
  bool execution_allowed = false;
  std::string run_command;  // consulted only when execution_allowed
  int turn_limit = 30;
  fs::path workspace_root;
};

enum class CommandDecision { Allow, Deny };

// Decides on the first token of the agent's shell request. Allow iff the
// token is allow-listed, or it is the configured run command and execution
// is enabled for this session.
CommandDecision guard_command(const std::string& command, const AgentPolicy& policy);

// ---- prompts ----------------------------------------------------------------

enum class PromptRole {
  Implement,
  Debug,
  Improve,
  AblationImplement,
  Write,
  Reflect,
  Review
};

const char* to_string(PromptRole r);

struct PromptAttachment {
  std::string name;
  std::string text;              // inline resource
  std::optional<fs::path> path;  // file resource; must exist
};

struct PromptBundle {
  PromptRole role = PromptRole::Write;
  std::string body;
  std::vector<PromptAttachment> attachments;

  // Throws InputError when the body is empty or a path attachment is missing.
  void validate() const;
  // Body plus inlined text attachments; path attachments listed by name.
  std::string render() const;
};

// ---- sessions ----------------------------------------------------------------

struct AgentFileWrite {
  std::string path;  // workspace-relative
  std::string content;
};

// One agent message requiring a host response.
struct AgentTurn {
  std::vector<AgentFileWrite> writes;
  std::optional<std::string> command;  // shell request, adjudicated by the host
  bool complete = false;
  std::string note;  // free text, lands in the transcript
};

struct SessionResult {
  int turns_used = 0;
  bool completed = false;
  std::vector<std::string> files_written;
  std::string transcript_digest;  // stored transcript reference
  std::vector<std::pair<int, std::string>> denied_commands;  // (turn, command)
};

class AgentSession {
public:
  virtual ~AgentSession() = default;
  // The host's reply to the previous turn goes in, the next turn comes out.
  virtual AgentTurn next_turn(const std::string& host_reply) = 0;
};

class CodingAgentBackend {
public:
  virtual ~CodingAgentBackend() = default;
  // Sessions are independent objects so concurrent workers can each own one.
  virtual std::unique_ptr<AgentSession> start_session(const PromptBundle& prompt,
                                                      const AgentPolicy& policy) = 0;
};

class TextBackend {
public:
  virtual ~TextBackend() = default;
  virtual std::string complete_text(const PromptBundle& prompt) = 0;
};

struct SessionOptions {
  fs::path transcript_file;      // empty -> transcript not persisted
  std::string transcript_label;  // what SessionResult records as the reference
};

// Drives one session under the policy: applies confined file writes,
// adjudicates commands (violations are recorded, never abort the session),
// and stops at completion or at the turn limit, whichever comes first.
SessionResult run_coding_session(CodingAgentBackend& backend, const PromptBundle& prompt,
                                 const AgentPolicy& policy,
                                 const SessionOptions& opts = {});

}  // namespace labpilot
