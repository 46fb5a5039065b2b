#pragma once

#include "labpilot/agents.hpp"

#include <string>

namespace labpilot {

// Chat-completion client for OpenAI-shaped endpoints
// (POST <endpoint>/chat/completions). Credentials via LABPILOT_LLM_API_KEY.
class HttpTextBackend : public TextBackend {
public:
  HttpTextBackend(std::string endpoint, std::string model);
  std::string complete_text(const PromptBundle& prompt) override;

private:
  std::string endpoint_;
  std::string model_;
};

}  // namespace labpilot
