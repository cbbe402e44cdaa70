#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rgmp/tensor.hpp"

namespace rgmp {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  int checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;

  bool ok(double tol) const { return max_rel_err < tol; }
};

// Central-difference verification of hand-written gradients.
//
//   loss_and_grad : evaluates the scalar loss AND accumulates analytic gradients
//                   into each Parameter's grad (called once, on zeroed grads)
//   loss_only     : evaluates the loss without touching gradients
//
// For each parameter a random subsample of entries_per_param entries (all
// entries when the tensor is smaller) is perturbed by +-eps and compared with
// relative error |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const std::function<double()>& loss_and_grad,
                           const std::function<double()>& loss_only,
                           const std::vector<Parameter*>& params, double eps,
                           int entries_per_param, std::uint64_t seed);

}  // namespace rgmp
