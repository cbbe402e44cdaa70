#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace rgmp {

// Dense row-major tensor of 64-bit reals, rank 1..4. Feature maps are rank-3
// (C,H,W), conv weights rank-4 (Cout,Cin,k,k), matrices rank-2, vectors rank-1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double& at(int a) { return v_[static_cast<std::size_t>(a)]; }
  double at(int a) const { return v_[static_cast<std::size_t>(a)]; }
  double& at(int a, int b) { return v_[static_cast<std::size_t>(a) * shape_[1] + b]; }
  double at(int a, int b) const { return v_[static_cast<std::size_t>(a) * shape_[1] + b]; }
  double& at(int a, int b, int c) {
    return v_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double at(int a, int b, int c) const {
    return v_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double& at(int a, int b, int c, int d) {
    return v_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  double at(int a, int b, int c, int d) const {
    return v_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void fill(double x);
  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // "(3,128,128)" -- for error messages.
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> v_;
};

// Named learnable with a gradient accumulator of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.fill(0.0); }
};

// Convolution geometry. Padding is (k-1)/2, which preserves spatial size at
// stride 1 and halves even extents at stride 2.
struct ConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;  // 1 or 3
  int stride = 1;  // 1 or 2

  int pad() const { return (kernel - 1) / 2; }
  int out_extent(int in) const { return (in + 2 * pad() - kernel) / stride + 1; }
  void validate() const;  // throws ValidationError on unsupported geometry
};

}  // namespace rgmp
