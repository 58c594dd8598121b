#pragma once

#include <spdlog/spdlog.h>

#include <string_view>

namespace selim {

inline void log_warning(std::string_view msg) { spdlog::warn("{}", msg); }
inline void log_info(std::string_view msg) { spdlog::info("{}", msg); }

}  // namespace selim
