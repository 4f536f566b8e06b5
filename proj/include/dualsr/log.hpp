#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace dualsr {

inline bool debug_logging_enabled() {
  static const bool enabled = std::getenv("DUALSR_DEBUG") != nullptr;
  return enabled;
}

inline void debug_warn(const std::string& msg) {
  if (debug_logging_enabled()) std::cerr << "[dualsr] " << msg << '\n';
}

}  // namespace dualsr
