#pragma once

// Structured logging: one JSON object per line on standard error.

#include <chrono>
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

namespace marsnet::cli {

class Logger {
 public:
  explicit Logger(std::string command, bool quiet = false) : command_(std::move(command)), quiet_(quiet) {}

  void info(const std::string& event, nlohmann::json fields = nlohmann::json::object()) { emit("info", event, std::move(fields)); }
  void warn(const std::string& event, nlohmann::json fields = nlohmann::json::object()) { emit("warn", event, std::move(fields)); }

  /// Errors are always printed, even when quiet.
  void error(const std::string& kind, const std::string& message) {
    nlohmann::json j{{"level", "error"}, {"command", command_}, {"kind", kind}, {"message", message}};
    std::cerr << j.dump() << std::endl;
  }

  double elapsed() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  void emit(const char* level, const std::string& event, nlohmann::json fields) {
    if (quiet_) return;
    nlohmann::json j{{"level", level}, {"command", command_}, {"event", event}, {"elapsed_s", elapsed()}};
    if (fields.is_object())
      for (auto& [k, v] : fields.items()) j[k] = v;
    std::cerr << j.dump() << std::endl;
  }

  std::string command_;
  bool quiet_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace marsnet::cli
