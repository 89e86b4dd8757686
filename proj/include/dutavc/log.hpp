#pragma once

// Structured logging: one JSON object per line, {"level", "event", ...fields}.

#include <ostream>
#include <string_view>

#include <json.hpp>

namespace dutavc {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

/// Messages below `level` are dropped. Default: kInfo.
void set_log_level(LogLevel level);
LogLevel log_level();
/// Destination stream (default std::cerr); nullptr silences logging.
void set_log_stream(std::ostream* out);

void log_event(LogLevel level, std::string_view event, const nlohmann::ordered_json& fields = nlohmann::ordered_json::object());

}  // namespace dutavc
