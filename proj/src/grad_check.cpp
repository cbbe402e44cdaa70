#include "rgmp/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "rgmp/errors.hpp"
#include "rgmp/rng.hpp"

namespace rgmp {

GradCheckReport grad_check(const std::function<double()>& loss_and_grad,
                           const std::function<double()>& loss_only,
                           const std::vector<Parameter*>& params, double eps,
                           int entries_per_param, std::uint64_t seed) {
  if (eps <= 0.0) throw ValidationError("grad_check eps must be positive");
  if (entries_per_param <= 0) {
    throw ValidationError("grad_check entries_per_param must be positive");
  }

  for (Parameter* p : params) p->zero_grad();
  (void)loss_and_grad();

  Rng rng(seed);
  GradCheckReport report;
  for (Parameter* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::size_t take = std::min<std::size_t>(n, static_cast<std::size_t>(entries_per_param));
    // partial Fisher-Yates gives a distinct random subsample
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n - i)));
      std::swap(idx[i], idx[j]);
    }

    GradCheckEntry entry;
    entry.param = p->name;
    entry.checked = static_cast<int>(take);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t e = idx[i];
      const double saved = p->value[e];
      p->value[e] = saved + eps;
      const double fp = loss_only();
      p->value[e] = saved - eps;
      const double fm = loss_only();
      p->value[e] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p->grad[e];
      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace rgmp
