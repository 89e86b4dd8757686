#pragma once

#include <stdexcept>
#include <string>

namespace dutavc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

#define DUTAVC_CHECK(cond, msg)                          \
  do {                                                   \
    if (!(cond)) throw ::dutavc::InvalidArgument(msg);   \
  } while (0)

}  // namespace dutavc
