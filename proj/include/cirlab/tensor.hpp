#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cirlab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major array of 64-bit reals.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  // Value of a one-element tensor.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

// 90-degree counter-clockwise rotation applied k times (k in {0,1,2,3});
// square 2-D input only. Pure index permutation, no interpolation.
Tensor rot90(const Tensor& img, int k);

// Stack images (all same shape) into an N x numel matrix, one row per image.
Tensor flatten_rows(const std::vector<Tensor>& images);

}  // namespace cirlab
