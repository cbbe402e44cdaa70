#include "rgmp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rgmp/errors.hpp"

namespace rgmp {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw ValidationError("tensor rank must be 1..4, got rank " +
                          std::to_string(shape_.size()));
  }
  std::size_t n = 1;
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (shape_[i] <= 0) {
      throw ValidationError("tensor axis " + std::to_string(i) +
                            " must be positive, got " + std::to_string(shape_[i]));
    }
    n *= static_cast<std::size_t>(shape_[i]);
  }
  v_.assign(n, 0.0);
}

void Tensor::fill(double x) { std::fill(v_.begin(), v_.end(), x); }

bool Tensor::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << ")";
  return os.str();
}

void ConvSpec::validate() const {
  if (kernel != 1 && kernel != 3) {
    throw ValidationError("conv kernel must be 1 or 3, got " + std::to_string(kernel));
  }
  if (stride != 1 && stride != 2) {
    throw ValidationError("conv stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (in_ch <= 0 || out_ch <= 0) {
    throw ValidationError("conv channel counts must be positive");
  }
}

}  // namespace rgmp
