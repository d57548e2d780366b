#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iostream>
#include <string>
#include <vector>

namespace cdcflow {

using Index = Eigen::Index;

/// Point sets are stored column-wise: a d x N matrix holds N points in R^d.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Collected non-fatal diagnostics. Functions that can warn take an optional
/// pointer; when it is null the message goes to std::clog instead.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
  if (sink) {
    sink->push_back(std::move(message));
  } else {
    std::clog << "warning: " << message << '\n';
  }
}

}  // namespace cdcflow
