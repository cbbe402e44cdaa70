#include "rgmp/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "rgmp/errors.hpp"
#include "rgmp/gss.hpp"

namespace rgmp {

Metrics evaluate_policy(const PolicyModel& model, const GmmParams& gmm,
                        const std::vector<TrainSample>& test, RefineMode mode,
                        double tol, double acc_s) {
  if (test.empty()) throw ValidationError("test set is empty");
  if (tol < 0.0) throw ValidationError("tolerance must be >= 0");
  gmm.validate();

  const Tensor& first = test.front().image;
  if (first.rank() != 3) throw ValidationError("test images must be rank-3 (C,H,W)");
  const int H = first.dim(1), W = first.dim(2);
  const RopeSet rope = model.make_rope_set(H, W);

  const std::size_t n = test.size();
  // Per-joint |error| columns, summed after sorting so the totals (and thus the
  // reported MAE) are bit-identical under any permutation of the test set.
  std::array<std::vector<double>, 6> abs_err;
  for (auto& col : abs_err) col.reserve(n);

  int hits = 0;
  for (const TrainSample& s : test) {
    if (s.image.rank() != 3 || s.image.dim(1) != H || s.image.dim(2) != W) {
      throw ValidationError("test images must share one extent");
    }
    const ActionVector raw = model.forward(s.image, rope, nullptr);
    const ActionVector act = refine(raw, gmm, mode);

    double worst = 0.0;
    for (int j = 0; j < 6; ++j) {
      const double e = std::abs(act[j] - s.label[j]);
      abs_err[j].push_back(e);
      worst = std::max(worst, e);
    }
    if (worst < tol) ++hits;
  }

  Metrics m;
  m.n = static_cast<int>(n);
  m.tol = tol;
  m.mode = mode == RefineMode::Nearest ? "nearest" : "aggregate";
  m.acc_t = static_cast<double>(hits) / static_cast<double>(n);
  m.acc_s = acc_s;
  m.acc = compute_accuracy(acc_s, m.acc_t);
  for (int j = 0; j < 6; ++j) {
    std::sort(abs_err[j].begin(), abs_err[j].end());
    double total = 0.0;
    for (double e : abs_err[j]) total += e;
    m.mae[j] = total / static_cast<double>(n);
  }
  return m;
}

std::string metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["acc_s"] = m.acc_s;
  j["acc_t"] = m.acc_t;
  j["acc"] = m.acc;
  j["mae"] = m.mae;
  j["n"] = m.n;
  j["tol"] = m.tol;
  j["mode"] = m.mode;
  return j.dump(2);
}

}  // namespace rgmp
