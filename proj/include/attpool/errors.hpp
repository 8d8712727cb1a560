#ifndef ATTPOOL_ERRORS_HPP
#define ATTPOOL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace attpool {

// Shape or dimension disagreement between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad argument values: negative weights, labels out of range, ...
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk artifact: bad magic, truncation, payload size mismatch.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset-level problem: missing file, empty split, label outside [0, C).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. running a backward pass without a cached forward pass.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Config-file problem. Carries the offending 1-based line number (0 = n/a).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what
                                    : what),
        line_(line) {}

  int line() const { return line_; }

private:
  int line_ = 0;
};

}  // namespace attpool

#endif
