#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xvf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an input shape or dimension does not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a forward computation produces NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised when reading or writing an on-disk artifact fails.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Energy VAD removed every frame.
class NoSpeechError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

template <typename E = Error, typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw E(detail::concat(std::forward<Args>(args)...));
}

template <typename E = Error, typename... Args>
void require(bool condition, Args&&... args) {
  if (!condition) fail<E>(std::forward<Args>(args)...);
}

/// Warnings go to stderr unless silenced (tests silence them).
void warn(std::string_view message);
void set_warnings_enabled(bool enabled);

template <typename... Args>
  requires(sizeof...(Args) >= 2)
void warn(Args&&... args) {
  warn(std::string_view(detail::concat(std::forward<Args>(args)...)));
}

}  // namespace xvf
