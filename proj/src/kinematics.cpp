#include "rgmp/kinematics.hpp"

#include <cmath>
#include <string>

#include "rgmp/errors.hpp"

namespace rgmp {

ActionVector kinematic_map(double cx, double cy, int img_w, int img_h) {
  if (img_w <= 0 || img_h <= 0) {
    throw ValidationError("kinematic map needs positive image extents");
  }
  if (!(cx >= 0.0) || !(cx <= img_w) || !(cy >= 0.0) || !(cy <= img_h)) {
    throw ValidationError("target center (" + std::to_string(cx) + ", " +
                          std::to_string(cy) + ") lies outside the " +
                          std::to_string(img_w) + "x" + std::to_string(img_h) + " image");
  }
  const double xh = cx / img_w;
  const double yh = cy / img_h;
  ActionVector j{};
  j[0] = M_PI * (xh - 0.5);
  j[1] = (M_PI / 4.0) * (yh - 0.5);
  j[2] = (M_PI / 6.0) * xh * yh;
  j[3] = (M_PI / 8.0) * (xh - yh);
  j[4] = (M_PI / 3.0) * yh;
  j[5] = 0.0;
  return j;
}

bool action_in_bounds(const ActionVector& a) {
  for (double v : a) {
    if (!std::isfinite(v) || std::fabs(v) > M_PI) return false;
  }
  return true;
}

}  // namespace rgmp
