#pragma once

#include <stdexcept>
#include <string>

namespace twostage {

// Malformed or out-of-contract input (files, sizes, parameters).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required upstream artifact (calibration, threshold) is absent.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical breakdown: non-PD covariance, degenerate kernel inputs,
// posterior rejection collapse.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twostage
