#include "cdan/log.hpp"

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace cdan {

namespace {

std::shared_ptr<spdlog::logger> make_logger(std::string_view fallback) {
  auto logger = spdlog::stderr_logger_mt("cdan");
  logger->set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("CDAN_LOG_LEVEL");
  logger->set_level(spdlog::level::from_str(env && *env ? env : std::string(fallback)));
  return logger;
}

std::once_flag g_once;
std::shared_ptr<spdlog::logger> g_logger;

spdlog::logger& logger(std::string_view fallback = "warn") {
  std::call_once(g_once, [fallback] { g_logger = make_logger(fallback); });
  return *g_logger;
}

}  // namespace

void init_logging(std::string_view fallback) { logger(fallback); }

void log_debug(std::string_view msg) { logger().debug(msg); }
void log_info(std::string_view msg) { logger().info(msg); }
void log_warn(std::string_view msg) { logger().warn(msg); }
void log_error(std::string_view msg) { logger().error(msg); }

}  // namespace cdan
