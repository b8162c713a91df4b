#pragma once

#include <string>

namespace cfs::log {

enum class Level { debug, info, warn, error };

Level parse_level(const std::string& name);
void set_level(Level level);
Level level();

void write(Level level, const std::string& message);
inline void debug(const std::string& m) { write(Level::debug, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void error(const std::string& m) { write(Level::error, m); }

}  // namespace cfs::log
