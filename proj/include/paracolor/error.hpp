#pragma once

#include <stdexcept>
#include <string>

namespace paracolor {

/// Process exit codes shared by every command.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numerical = 3 };

/// Bad arguments, flags, or contract violations by the caller.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Unreadable or malformed files, missing inputs, checkpoint mismatches.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or budget overruns during numerical work.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace paracolor
