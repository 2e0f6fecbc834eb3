#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gwnet {

struct GradCaseResult {
  std::string name;
  double tolerance = 0;
  double max_rel_error = 0;
  double seconds = 0;
  bool passed = false;
};

struct GradSuiteOptions {
  // Run only cases whose name contains this substring.
  std::string filter;
  // Adds an op whose backward is wrong on purpose; the suite must flag it.
  bool broken_fixture = false;
};

/// Finite-difference checks of every tensorcore op and every loss term.
/// Double-backward and penalty cases use 1e-3, everything else 1e-4.
/// Writes one line per case to `log` when given.
std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& opt = {},
                                           std::ostream* log = nullptr);

}  // namespace gwnet
