#include "labpilot/agents.hpp"

#include "labpilot/errors.hpp"

#include <sstream>

namespace labpilot {

const char* to_string(PromptRole r) {
  switch (r) {
    case PromptRole::Implement: return "Implement";
    case PromptRole::Debug: return "Debug";
    case PromptRole::Improve: return "Improve";
    case PromptRole::AblationImplement: return "AblationImplement";
    case PromptRole::Write: return "Write";
    case PromptRole::Reflect: return "Reflect";
    case PromptRole::Review: return "Review";
  }
  return "Write";
}

CommandDecision guard_command(const std::string& command, const AgentPolicy& policy) {
  std::string token = trim(command);
  auto sp = token.find_first_of(" \t");
  if (sp != std::string::npos) token = token.substr(0, sp);
  if (token.empty()) return CommandDecision::Deny;
  if (policy.allowed_commands.count(token)) return CommandDecision::Allow;
  if (policy.execution_allowed && !policy.run_command.empty() && token == policy.run_command)
    return CommandDecision::Allow;
  return CommandDecision::Deny;
}

void PromptBundle::validate() const {
  if (trim(body).empty()) throw InputError("prompt body must be non-empty");
  for (const auto& a : attachments) {
    if (a.path && !fs::exists(*a.path))
      throw InputError("prompt attachment '" + a.name + "' missing: " + a.path->string());
  }
}

std::string PromptBundle::render() const {
  std::ostringstream out;
  out << body;
  for (const auto& a : attachments) {
    out << "\n\n--- " << a.name << " ---\n";
    if (!a.text.empty()) out << a.text;
    if (a.path) out << "[file: " << a.path->generic_string() << "]";
  }
  return out.str();
}

SessionResult run_coding_session(CodingAgentBackend& backend, const PromptBundle& prompt,
                                 const AgentPolicy& policy, const SessionOptions& opts) {
  prompt.validate();
  if (policy.turn_limit < 1) throw InputError("turn_limit must be >= 1");
  if (!fs::is_directory(policy.workspace_root))
    throw InputError("workspace missing: " + policy.workspace_root.string());

  auto session = backend.start_session(prompt, policy);

  SessionResult result;
  std::ostringstream transcript;
  transcript << "# role=" << to_string(prompt.role) << " turn_limit=" << policy.turn_limit
             << "\n";

  std::string reply = "session started";
  for (int turn = 1; turn <= policy.turn_limit; ++turn) {
    AgentTurn t = session->next_turn(reply);
    reply.clear();
    if (!t.note.empty()) transcript << "[turn " << turn << "] " << t.note << "\n";

    for (const auto& w : t.writes) {
      fs::path rel(w.path);
      auto confined = rel.is_absolute()
                          ? std::nullopt
                          : relative_within(policy.workspace_root, policy.workspace_root / rel);
      if (!confined) {
        result.denied_commands.emplace_back(turn, "write " + w.path);
        transcript << "[turn " << turn << "] write " << w.path << " -> denied (outside workspace)\n";
        reply += "denied write: " + w.path + "\n";
        continue;
      }
      write_file(policy.workspace_root / *confined, w.content);
      result.files_written.push_back(*confined);
      transcript << "[turn " << turn << "] write " << *confined << " (" << w.content.size()
                 << " bytes)\n";
    }

    if (t.command) {
      if (guard_command(*t.command, policy) == CommandDecision::Allow) {
        transcript << "[turn " << turn << "] command: " << *t.command << " -> allow\n";
        reply += "allowed: " + *t.command + "\n";
      } else {
        result.denied_commands.emplace_back(turn, *t.command);
        transcript << "[turn " << turn << "] command: " << *t.command << " -> deny\n";
        reply += "denied: " + *t.command + "\n";
      }
    }

    if (t.complete) {
      result.completed = true;
      result.turns_used = turn;
      transcript << "[turn " << turn << "] complete\n";
      break;
    }
    result.turns_used = turn;
  }

  transcript << "# end turns_used=" << result.turns_used
             << " completed=" << (result.completed ? "true" : "false") << "\n";
  if (!opts.transcript_file.empty()) write_file(opts.transcript_file, transcript.str());
  result.transcript_digest = !opts.transcript_label.empty()
                                 ? opts.transcript_label
                                 : opts.transcript_file.generic_string();
  return result;
}

}  // namespace labpilot
