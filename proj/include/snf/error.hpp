#ifndef SNF_ERROR_HPP
#define SNF_ERROR_HPP

#include <stdexcept>
#include <string>

namespace snf {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed archive bytes, index text, or serialized documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A network, plan, or allocation that is inconsistent with its inputs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain (e.g. a reduction target not in (0,1)).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Iterative numerics that failed to converge or produced out-of-contract values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace snf

#endif  // SNF_ERROR_HPP
