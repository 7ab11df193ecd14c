#pragma once

#include <sstream>
#include <string_view>

namespace mgimm::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Current verbosity. Initialised from the MGIMM_LOG environment variable
/// (error|warn|info|debug); defaults to warn.
Level level();
void set_level(Level level);

void write(Level level, std::string_view message);

template <typename... Args>
void emit(Level lvl, const Args&... args) {
    if (static_cast<int>(lvl) > static_cast<int>(level())) {
        return;
    }
    std::ostringstream out;
    (out << ... << args);
    write(lvl, out.str());
}

template <typename... Args>
void warn(const Args&... args) {
    emit(Level::warn, args...);
}

template <typename... Args>
void info(const Args&... args) {
    emit(Level::info, args...);
}

template <typename... Args>
void debug(const Args&... args) {
    emit(Level::debug, args...);
}

}  // namespace mgimm::log
