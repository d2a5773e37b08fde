#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace regmatch {

// Dense row-major stack of matrices: [batch][rows][cols]. Single instances
// use batch = 1.
struct Shape {
  std::size_t batch = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return batch * rows * cols; }
  std::size_t dim(int axis) const noexcept {
    return axis == 0 ? batch : axis == 1 ? rows : cols;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor row(std::span<const double> values);
  static Tensor scalar(double value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t batch() const noexcept { return shape_.batch; }
  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator()(std::size_t b, std::size_t r, std::size_t c) {
    return data_[(b * shape_.rows + r) * shape_.cols + c];
  }
  double operator()(std::size_t b, std::size_t r, std::size_t c) const {
    return data_[(b * shape_.rows + r) * shape_.cols + c];
  }
  // Matrix view of batch entry 0.
  double& at(std::size_t r, std::size_t c) { return (*this)(0, r, c); }
  double at(std::size_t r, std::size_t c) const { return (*this)(0, r, c); }
  double item() const;

  std::span<double> row_span(std::size_t b, std::size_t r);
  std::span<const double> row_span(std::size_t b, std::size_t r) const;

  Tensor batch_slice(std::size_t b) const;
  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;  // per batch entry
  bool all_finite() const noexcept;
  void fill(double value);

 private:
  Shape shape_{0, 0, 0};
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace regmatch
