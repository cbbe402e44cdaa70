#pragma once

#include "rgmp/model.hpp"

namespace rgmp {

// Deterministic ground-truth labeler: maps a target center (pixels) to the six
// joint angles. With xh = cx/W and yh = cy/H:
//   j1 = pi*(xh - 0.5)      j2 = (pi/4)*(yh - 0.5)   j3 = (pi/6)*xh*yh
//   j4 = (pi/8)*(xh - yh)   j5 = (pi/3)*yh           j6 = 0
// The map is fixed for all time; training labels, GMM fits, and evaluation all
// derive from it. Throws ValidationError when the center lies outside the image.
ActionVector kinematic_map(double cx, double cy, int img_w, int img_h);

// Workspace convention: every joint finite with |angle| <= pi.
bool action_in_bounds(const ActionVector& a);

}  // namespace rgmp
