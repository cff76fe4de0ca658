#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace constrex {

enum class LogLevel { Off = 0, Info = 1, Debug = 2 };

/// Verbosity from the CONSTREX_LOG environment variable: "info"/"1" or "debug"/"2".
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("CONSTREX_LOG");
        if (!env) return LogLevel::Off;
        const std::string_view v(env);
        if (v == "debug" || v == "2") return LogLevel::Debug;
        if (v == "info" || v == "1") return LogLevel::Info;
        return LogLevel::Off;
    }();
    return level;
}

inline void log_message(LogLevel level, std::string_view msg) {
    if (level != LogLevel::Off && int(level) <= int(log_level())) {
        std::clog << "[constrex] " << msg << '\n';
    }
}

}  // namespace constrex
