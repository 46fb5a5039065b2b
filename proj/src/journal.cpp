#include "labpilot/journal.hpp"

#include "labpilot/errors.hpp"

#include <fstream>
#include <sstream>

namespace labpilot {

std::string RunJournal::encode_line(const JournalEvent& ev) {
  nlohmann::json j;
  j["seq"] = ev.seq;
  j["ts"] = ev.ts;
  j["type"] = ev.type;
  j["key"] = ev.key;
  j["data"] = ev.data;
  std::string body = j.dump();
  return hex32(crc32(body)) + " " + body;
}

std::optional<JournalEvent> RunJournal::decode_line(const std::string& line) {
  auto sp = line.find(' ');
  if (sp == std::string::npos || sp != 8) return std::nullopt;
  std::string body = line.substr(sp + 1);
  if (hex32(crc32(body)) != line.substr(0, 8)) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  JournalEvent ev;
  try {
    ev.seq = j.at("seq").get<std::uint64_t>();
    ev.ts = j.at("ts").get<std::string>();
    ev.type = j.at("type").get<std::string>();
    ev.key = j.at("key").get<std::string>();
    ev.data = j.at("data");
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  return ev;
}

RunJournal::RunJournal(fs::path file) : file_(std::move(file)) {
  if (fs::exists(file_)) {
    std::ifstream in(file_, std::ios::binary);
    if (!in) throw InputError("cannot open journal: " + file_.string());
    std::string line;
    std::uint64_t expect = 1;
    std::ostringstream valid_prefix;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto ev = decode_line(line);
      if (!ev || ev->seq != expect) {
        recovered_tail_ = true;
        break;
      }
      valid_prefix << line << "\n";
      if (!ev->key.empty() && !key_index_.count(ev->key))
        key_index_[ev->key] = events_.size();
      events_.push_back(std::move(*ev));
      ++expect;
    }
    if (recovered_tail_) {
      // Drop the damaged tail so appends continue from a consistent state.
      atomic_write_file(file_, valid_prefix.str());
    }
  } else if (file_.has_parent_path()) {
    fs::create_directories(file_.parent_path());
  }
  out_.open(file_, std::ios::binary | std::ios::app);
  if (!out_) throw InputError("cannot open journal for appending: " + file_.string());
}

std::uint64_t RunJournal::append(const std::string& type, const std::string& key,
                                 nlohmann::json data) {
  std::uint64_t seq = 0;
  {
    std::lock_guard<std::mutex> lock(mu_);
    JournalEvent ev;
    ev.seq = last_seq() + 1;
    ev.ts = iso_timestamp_now();
    ev.type = type;
    ev.key = key;
    ev.data = std::move(data);
    out_ << encode_line(ev) << "\n";
    out_.flush();
    if (!out_) throw FatalError("journal write failed: " + file_.string());
    if (!ev.key.empty() && !key_index_.count(ev.key)) key_index_[ev.key] = events_.size();
    events_.push_back(std::move(ev));
    seq = events_.back().seq;
  }
  if (after_append) after_append(seq);
  return seq;
}

const JournalEvent* RunJournal::find(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = key_index_.find(key);
  if (it == key_index_.end()) return nullptr;
  return &events_[it->second];
}

std::vector<std::uint64_t> RunJournal::rng_draws() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::uint64_t> out;
  for (const auto& ev : events_)
    if (ev.type == "RngDraw") out.push_back(ev.data.at("value").get<std::uint64_t>());
  return out;
}

JournaledRng::JournaledRng(std::uint64_t seed, RunJournal* journal)
    : engine_(seed), journal_(journal) {
  if (journal_) replay_ = journal_->rng_draws();
}

std::uint64_t JournaledRng::next_u64(const std::string& purpose) {
  std::uint64_t fresh = engine_();
  std::uint64_t value = fresh;
  if (ordinal_ < replay_.size()) {
    value = replay_[ordinal_];
    if (value != fresh && journal_)
      journal_->warn("rng replay diverged at draw " + std::to_string(ordinal_ + 1) +
                     " (" + purpose + "); journaled value wins");
  } else if (journal_) {
    journal_->append("RngDraw", "rng/" + std::to_string(ordinal_ + 1),
                     {{"ordinal", ordinal_ + 1}, {"purpose", purpose}, {"value", value}});
  }
  ++ordinal_;
  return value;
}

double JournaledRng::unit_from(std::uint64_t raw) {
  return static_cast<double>(raw >> 11) * 0x1.0p-53;
}

std::size_t JournaledRng::index_from(std::uint64_t raw, std::size_t n) {
  // Fixed-point multiply keeps the mapping deterministic across platforms;
  // bias is at most n / 2^64.
  using u128 = unsigned __int128;
  return static_cast<std::size_t>((static_cast<u128>(raw) * n) >> 64);
}

double JournaledRng::next_unit(const std::string& purpose) {
  return unit_from(next_u64(purpose));
}

std::size_t JournaledRng::uniform_index(std::size_t n, const std::string& purpose) {
  if (n == 0) throw InputError("uniform_index: n must be positive");
  return index_from(next_u64(purpose), n);
}

bool JournaledRng::bernoulli(double p, const std::string& purpose) {
  return next_unit(purpose) < p;
}

}  // namespace labpilot
