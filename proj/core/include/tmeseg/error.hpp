#pragma once

#include <stdexcept>
#include <string>

namespace tmeseg {

// Usage errors are caller mistakes (bad arguments, bad config); data errors are
// malformed or inconsistent inputs. The CLI maps them to exit codes 1 and 2.
enum class ErrorKind { usage, data };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return Error(ErrorKind::usage, what); }
inline Error data_error(const std::string& what) { return Error(ErrorKind::data, what); }

}  // namespace tmeseg
