#include "cadm/log.hpp"

#include <iostream>

namespace cadm {

namespace {
std::vector<std::string>* g_warn_capture = nullptr;
bool g_quiet = false;
}  // namespace

void log_warn(const std::string& message) {
  if (g_warn_capture != nullptr) {
    g_warn_capture->push_back(message);
    return;
  }
  if (!g_quiet) {
    std::cerr << "[cadm] warning: " << message << "\n";
  }
}

void log_info(const std::string& message) {
  if (!g_quiet) {
    std::cerr << "[cadm] " << message << "\n";
  }
}

std::vector<std::string>* set_warn_capture(std::vector<std::string>* sink) {
  std::vector<std::string>* previous = g_warn_capture;
  g_warn_capture = sink;
  return previous;
}

void set_log_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace cadm
