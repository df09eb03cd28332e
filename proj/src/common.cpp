#include "outflip/common.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace outflip {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

namespace log {

namespace {
std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

void emit(const char* tag, std::string_view message) {
  std::lock_guard lock(g_mutex);
  std::cerr << '[' << tag << "] " << message << '\n';
}
}  // namespace

void set_level(Level level) noexcept { g_level.store(level); }
Level level() noexcept { return g_level.load(); }

void warn(std::string_view message) {
  if (g_level.load() >= Level::warn) emit("warn", message);
}
void info(std::string_view message) {
  if (g_level.load() >= Level::info) emit("info", message);
}
void debug(std::string_view message) {
  if (g_level.load() >= Level::debug) emit("debug", message);
}

}  // namespace log

}  // namespace outflip
