#pragma once

#include <string>
#include <vector>

namespace cadm {

// Warnings go to stderr. Tests may install a capture sink to assert that a
// specific warning was emitted; pass nullptr to restore stderr-only logging.
void log_warn(const std::string& message);
void log_info(const std::string& message);

std::vector<std::string>* set_warn_capture(std::vector<std::string>* sink);
void set_log_quiet(bool quiet);

}  // namespace cadm
