#pragma once

#include <stdexcept>
#include <string>

namespace titan {

/// A loss or parameter became non-finite. Carries a short diagnostic.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable or inconsistent input: files, configs, checkpoints.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace titan
