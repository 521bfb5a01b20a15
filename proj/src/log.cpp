#include "medart/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace medart {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::Info)};
std::mutex g_mu;
const char* tag(LogLevel l) {
    switch (l) {
        case LogLevel::Debug: return "debug";
        case LogLevel::Info: return "info";
        case LogLevel::Warn: return "warn";
        case LogLevel::Error: return "error";
    }
    return "?";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

void log(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) < g_level.load()) return;
    std::lock_guard lk(g_mu);
    std::fprintf(stderr, "[%s] %s\n", tag(level), msg.c_str());
}

}  // namespace medart
