#pragma once

#include <stdexcept>
#include <string>

namespace cadm {

// Caller violated a documented precondition (bad shapes, swapped domains, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input file; message carries file path and line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally valid input that fails a semantic check (empty corpus, missing
// source label, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (diverged loss, saturated
// gradients, ...).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cadm
