#pragma once

#include <array>
#include <string>
#include <vector>

#include "rgmp/gmm.hpp"
#include "rgmp/model.hpp"

namespace rgmp {

// Closed-loop quality of the full pipeline (policy regression + mixture
// refinement) over a labeled test set.
struct Metrics {
  double acc_s = 0.0;  // planning-stage accuracy (selection conformance)
  double acc_t = 0.0;  // fraction of samples whose refined action hits the label
  double acc = 0.0;    // acc_s * acc_t
  std::array<double, 6> mae{};  // mean absolute error per joint, refined actions
  int n = 0;
  double tol = 0.0;
  std::string mode;  // "nearest" or "aggregate"
};

// A test sample counts as a hit when every refined joint lands strictly within
// tol of the label. Rotary tables are built once for the shared image extents;
// MAE is accumulated in sorted order so the result is independent of test-set
// ordering. Empty test set -> ValidationError.
Metrics evaluate_policy(const PolicyModel& model, const GmmParams& gmm,
                        const std::vector<TrainSample>& test, RefineMode mode,
                        double tol, double acc_s);

std::string metrics_to_json(const Metrics& m);

}  // namespace rgmp
