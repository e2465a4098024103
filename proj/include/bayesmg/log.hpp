#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace bayesmg {

using LogSink = std::function<void(const std::string&)>;

namespace detail {

inline LogSink& log_sink() {
  static LogSink sink = [](const std::string& msg) { std::clog << "[bayesmg] " << msg << '\n'; };
  return sink;
}

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Replace the warning sink (pass an empty function to silence warnings).
inline void set_log_sink(LogSink sink) {
  std::lock_guard<std::mutex> lock(detail::log_mutex());
  detail::log_sink() = std::move(sink);
}

inline void log_warning(const std::string& msg) {
  std::lock_guard<std::mutex> lock(detail::log_mutex());
  if (detail::log_sink()) detail::log_sink()("warning: " + msg);
}

}  // namespace bayesmg
