#include "cfsynth/log.hpp"

#include "cfsynth/error.hpp"

#include <atomic>
#include <iostream>

namespace cfs::log {

namespace {
std::atomic<Level> g_level{Level::info};
}

Level parse_level(const std::string& name) {
    if (name == "debug") return Level::debug;
    if (name == "info") return Level::info;
    if (name == "warn" || name == "warning") return Level::warn;
    if (name == "error") return Level::error;
    reject("unknown log level '" + name + "' (expected debug, info, warn, error)");
}

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void write(Level lvl, const std::string& message) {
    if (lvl < g_level.load()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::cerr << '[' << names[static_cast<int>(lvl)] << "] " << message << '\n';
}

}  // namespace cfs::log
