#include "cirlab/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace cirlab {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(shape));
  }
  data.assign(shape_numel(shape), fill);
}

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values) {
  if (values.size() != r * c)
    throw std::invalid_argument("value count " + std::to_string(values.size()) + " does not fill " +
                                std::to_string(r) + "x" + std::to_string(c));
  shape = {r, c};
  data = std::move(values);
}

Tensor Tensor::scalar(double v) {
  Tensor t(Shape{1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw std::invalid_argument("rows() on non-matrix tensor " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw std::invalid_argument("cols() on non-matrix tensor " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor rot90(const Tensor& img, int k) {
  if (!img.is_matrix() || img.rows() != img.cols())
    throw std::invalid_argument("rot90 requires a square matrix, got " + shape_str(img.shape));
  k = ((k % 4) + 4) % 4;
  const std::size_t n = img.rows();
  Tensor out = img;
  for (int step = 0; step < k; ++step) {
    Tensor next(Shape{n, n});
    // counter-clockwise: out(i,j) = in(j, n-1-i)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next.at(i, j) = out.at(j, n - 1 - i);
    out = std::move(next);
  }
  return out;
}

Tensor flatten_rows(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("flatten_rows: empty image list");
  const std::size_t d = images[0].numel();
  Tensor out(Shape{images.size(), d});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].numel() != d)
      throw std::invalid_argument("flatten_rows: image " + std::to_string(i) + " has shape " +
                                  shape_str(images[i].shape) + ", expected numel " + std::to_string(d));
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = images[i].data[j];
  }
  return out;
}

}  // namespace cirlab
