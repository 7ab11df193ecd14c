#include "mgimm/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>

namespace mgimm::log {
namespace {

Level level_from_env() {
    const char* raw = std::getenv("MGIMM_LOG");
    if (raw == nullptr) {
        return Level::warn;
    }
    const std::string value(raw);
    if (value == "error") return Level::error;
    if (value == "info") return Level::info;
    if (value == "debug") return Level::debug;
    return Level::warn;
}

std::atomic<int>& current() {
    static std::atomic<int> lvl{static_cast<int>(level_from_env())};
    return lvl;
}

const char* tag(Level lvl) {
    switch (lvl) {
        case Level::error: return "error";
        case Level::warn: return "warn";
        case Level::info: return "info";
        case Level::debug: return "debug";
    }
    return "?";
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }

void set_level(Level lvl) { current().store(static_cast<int>(lvl)); }

void write(Level lvl, std::string_view message) {
    std::cerr << "[mgimm " << tag(lvl) << "] " << message << '\n';
}

}  // namespace mgimm::log
