#pragma once

#include "labpilot/util.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace labpilot {

// Append-only run journal. One record per line:
//
//   <crc32-hex> {"seq":N,"ts":"...","type":"...","key":"...","data":{...}}
//
// The checksum covers the JSON text, sequence numbers are gapless, and a
// corrupted tail is truncated back to the last valid record on load. Every
// stochastic decision is journaled as an RngDraw record before the work that
// depends on it, which is what makes resume replay the same choices.

struct JournalEvent {
  std::uint64_t seq = 0;
  std::string ts;
  std::string type;
  std::string key;  // unit-of-work key; empty for diagnostics
  nlohmann::json data;
};

class RunJournal {
public:
  // Opens `file` for appending, replaying any existing records first.
  // `recovered_tail()` reports whether a corrupted tail was dropped.
  explicit RunJournal(fs::path file);

  std::uint64_t append(const std::string& type, const std::string& key,
                       nlohmann::json data);

  const std::vector<JournalEvent>& events() const { return events_; }
  std::uint64_t last_seq() const { return events_.empty() ? 0 : events_.back().seq; }
  bool recovered_tail() const { return recovered_tail_; }

  // First event committed under `key`, if any. Units commit exactly once.
  const JournalEvent* find(const std::string& key) const;
  // All journaled RngDraw values, in draw order.
  std::vector<std::uint64_t> rng_draws() const;

  void warn(const std::string& msg) { append("Warning", "", {{"message", msg}}); }

  // Test hook: invoked after each append with the new sequence number.
  std::function<void(std::uint64_t)> after_append;

  static std::string encode_line(const JournalEvent& ev);
  // nullopt when the line is damaged (bad checksum / malformed JSON).
  static std::optional<JournalEvent> decode_line(const std::string& line);

private:
  fs::path file_;
  std::ofstream out_;
  std::vector<JournalEvent> events_;
  std::map<std::string, size_t> key_index_;
  bool recovered_tail_ = false;
  mutable std::mutex mu_;
};

// Seeded RNG whose raw draws are journaled and, on resume, replayed from the
// journal so the full decision sequence is reproducible. One journal record
// per decision.
class JournaledRng {
public:
  JournaledRng(std::uint64_t seed, RunJournal* journal);

  std::uint64_t next_u64(const std::string& purpose);
  // Uniform in [0,1), 53-bit mantissa.
  double next_unit(const std::string& purpose);
  // Uniform index in [0,n) from a single draw.
  std::size_t uniform_index(std::size_t n, const std::string& purpose);
  bool bernoulli(double p, const std::string& purpose);

  std::uint64_t draws_made() const { return ordinal_; }

  static double unit_from(std::uint64_t raw);
  static std::size_t index_from(std::uint64_t raw, std::size_t n);

private:
  std::mt19937_64 engine_;
  RunJournal* journal_;
  std::vector<std::uint64_t> replay_;
  std::uint64_t ordinal_ = 0;
};

}  // namespace labpilot
