#pragma once

#include <string_view>

namespace cdan {

// Diagnostics go to stderr. The level comes from CDAN_LOG_LEVEL
// (trace, debug, info, warn, error, off); `fallback` applies when it is unset.
void init_logging(std::string_view fallback = "warn");

void log_debug(std::string_view msg);
void log_info(std::string_view msg);
void log_warn(std::string_view msg);
void log_error(std::string_view msg);

}  // namespace cdan
