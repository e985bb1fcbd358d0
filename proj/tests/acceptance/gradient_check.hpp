#pragma once

// Criterion 6 runs against the double-precision build; this header keeps the
// float and double libraries apart at the call site.

#include <string>

struct GradientCheckSummary {
  int checked = 0;
  int failed = 0;
  double worst_rel = 0;
  bool stages_reached = false;
  std::string detail;
};

GradientCheckSummary run_gradient_check();
