#include "regmatch/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "regmatch/errors.hpp"

namespace regmatch {

const char* category_name(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kData: return "data";
    case ErrorCategory::kFormat: return "format";
    case ErrorCategory::kDomain: return "domain";
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kAdapter: return "adapter";
    case ErrorCategory::kTraining: return "training";
  }
  return "unknown";
}

std::string Shape::str() const {
  return "[" + std::to_string(batch) + "x" + std::to_string(rows) + "x" +
         std::to_string(cols) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor(Shape{1, rows, cols}, fill);
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(Shape{1, 1, values.size()},
                std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1, 1, 1}, value); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{1, r, c}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

std::span<double> Tensor::row_span(std::size_t b, std::size_t r) {
  return {data_.data() + (b * shape_.rows + r) * shape_.cols, shape_.cols};
}

std::span<const double> Tensor::row_span(std::size_t b, std::size_t r) const {
  return {data_.data() + (b * shape_.rows + r) * shape_.cols, shape_.cols};
}

Tensor Tensor::batch_slice(std::size_t b) const {
  const std::size_t n = shape_.rows * shape_.cols;
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(b * n);
  return Tensor(Shape{1, shape_.rows, shape_.cols},
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != shape_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

Tensor Tensor::transposed() const {
  Tensor out(Shape{shape_.batch, shape_.cols, shape_.rows});
  for (std::size_t b = 0; b < shape_.batch; ++b)
    for (std::size_t r = 0; r < shape_.rows; ++r)
      for (std::size_t c = 0; c < shape_.cols; ++c) out(b, c, r) = (*this)(b, r, c);
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace regmatch
