#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mmfl {

// Dense row-major float64 array. Rank 1 and rank 2 are the only ranks the
// library operates on, but the shape vector is general.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 accessors. rows() of a rank-1 tensor is 1.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool all_finite() const noexcept;
  // Throws NumericError naming `what` if any entry is NaN or infinite.
  void require_finite(const std::string& what) const;

  Tensor transposed() const;
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// c = a * b for rank-2 operands.
Tensor matmul(const Tensor& a, const Tensor& b);
// c = a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// c = a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor column_sum(const Tensor& x);
Tensor column_mean(const Tensor& x);
// Biased (divisor B) covariance of the rows of x around `mean`.
Tensor row_covariance(const Tensor& x, const Tensor& mean);

void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& dst, double factor);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace mmfl
