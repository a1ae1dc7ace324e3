#include "skd/error.hpp"

#include <iostream>
#include <vector>

namespace skd {
namespace {

thread_local WarningHandler g_handler;

}  // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  WarningHandler previous = std::move(g_handler);
  g_handler = std::move(handler);
  return previous;
}

void warn(std::string_view message) {
  if (g_handler) {
    g_handler(message);
    return;
  }
  std::cerr << "warning: " << message << '\n';
}

WarningCapture::WarningCapture() {
  previous_ = set_warning_handler([this](std::string_view m) { messages_.emplace_back(m); });
}

WarningCapture::~WarningCapture() { set_warning_handler(std::move(previous_)); }

bool WarningCapture::contains(std::string_view needle) const {
  for (const auto& m : messages_) {
    if (m.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace skd
