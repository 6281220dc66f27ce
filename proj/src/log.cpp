// SPDX-License-Identifier: Apache-2.0
#include "ssar/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <stdexcept>

namespace ssar::log {
namespace {

Level from_env() {
  const char* v = std::getenv("SSAR_LOG");
  if (!v || !*v) return Level::error;
  try {
    return parse_level(v);
  } catch (const std::invalid_argument&) {
    std::fprintf(stderr, "warning: ignoring SSAR_LOG=%s\n", v);
    return Level::error;
  }
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

void emit(Level l, const char* tag, const std::string& message) {
  if (static_cast<int>(l) > current().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::fprintf(stderr, "[%s] %s\n", tag, message.c_str());
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

Level parse_level(const std::string& t) {
  if (t == "error") return Level::error;
  if (t == "info") return Level::info;
  if (t == "debug") return Level::debug;
  throw std::invalid_argument("log level must be error, info or debug, got '" + t + "'");
}

void error(const std::string& m) { emit(Level::error, "error", m); }
void info(const std::string& m) { emit(Level::info, "info", m); }
void debug(const std::string& m) { emit(Level::debug, "debug", m); }

}  // namespace ssar::log
