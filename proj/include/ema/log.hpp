#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace ema {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from EMA_LOG_LEVEL (error|warn|info|debug); defaults to info.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("EMA_LOG_LEVEL");
        if (!env) return LogLevel::Info;
        if (std::strcmp(env, "error") == 0) return LogLevel::Error;
        if (std::strcmp(env, "warn") == 0) return LogLevel::Warn;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_at(LogLevel level, const char* tag, const char* fmt, std::va_list args) {
    if (static_cast<int>(level) > static_cast<int>(log_level())) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, args);
    std::fputc('\n', stderr);
}

#define EMA_LOG_FN(name, level, tag)                      \
    inline void name(const char* fmt, ...) {              \
        std::va_list args;                                \
        va_start(args, fmt);                              \
        log_at(level, tag, fmt, args);                    \
        va_end(args);                                     \
    }

EMA_LOG_FN(log_error, LogLevel::Error, "error")
EMA_LOG_FN(log_warn, LogLevel::Warn, "warn")
EMA_LOG_FN(log_info, LogLevel::Info, "info")
EMA_LOG_FN(log_debug, LogLevel::Debug, "debug")

#undef EMA_LOG_FN

}  // namespace ema
