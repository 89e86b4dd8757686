#include "dutavc/log.hpp"

#include <iostream>
#include <mutex>

namespace dutavc {

namespace {

struct LogState {
  std::mutex mu;
  LogLevel level = LogLevel::kInfo;
  std::ostream* out = &std::cerr;
};

LogState& state() {
  static LogState s;
  return s;
}

const char* level_name(LogLevel l) {
  switch (l) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarn: return "warn";
    case LogLevel::kError: return "error";
  }
  return "info";
}

}  // namespace

void set_log_level(LogLevel level) {
  std::lock_guard lock(state().mu);
  state().level = level;
}

LogLevel log_level() {
  std::lock_guard lock(state().mu);
  return state().level;
}

void set_log_stream(std::ostream* out) {
  std::lock_guard lock(state().mu);
  state().out = out;
}

void log_event(LogLevel level, std::string_view event, const nlohmann::ordered_json& fields) {
  auto& s = state();
  std::lock_guard lock(s.mu);
  if (s.out == nullptr || level < s.level) return;
  nlohmann::ordered_json j;
  j["level"] = level_name(level);
  j["event"] = std::string(event);
  if (fields.is_object())
    for (const auto& [k, v] : fields.items()) j[k] = v;
  *s.out << j.dump() << '\n';
  s.out->flush();
}

}  // namespace dutavc
