#pragma once

#include <stdexcept>
#include <string>

namespace cherry {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind : int {
  config = 2,   // bad flags, bad config file, incompatible resume state
  data = 3,     // malformed datasets, caches, replies
  backend = 4,  // remote scoring/embedding backend failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(ErrorKind::config, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}
[[noreturn]] inline void throw_backend(const std::string& msg) {
  throw Error(ErrorKind::backend, msg);
}

}  // namespace cherry
