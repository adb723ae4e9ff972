#include "xvf/error.hpp"

#include <atomic>
#include <iostream>

namespace xvf {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}

void warn(std::string_view message) {
  if (g_warnings_enabled.load(std::memory_order_relaxed)) {
    std::cerr << "WARNING: " << message << '\n';
  }
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled.store(enabled); }

}  // namespace xvf
