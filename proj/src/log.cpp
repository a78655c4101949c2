#include "mecasa/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace mecasa::log {

Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("MECASA_LOG_LEVEL");
    const std::string v = env ? env : "";
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

void write(Level level, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[mecasa " << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace mecasa::log
