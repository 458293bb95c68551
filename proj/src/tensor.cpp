#include "mmfl/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "mmfl/error.hpp"

namespace mmfl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
  }
}

ConstMap view(const Tensor& t) {
  return ConstMap(t.storage().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw DimensionError("rows() on tensor of shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw DimensionError("cols() on tensor of shape " + shape_string(shape_));
  return shape_[1];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError(what + ": non-finite value");
}

Tensor Tensor::transposed() const {
  require_rank2(*this, "transposed");
  Tensor out({shape_[1], shape_[0]});
  for (std::size_t i = 0; i < shape_[0]; ++i)
    for (std::size_t j = 0; j < shape_[1]; ++j) out.at(j, i) = at(i, j);
  return out;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  if (out.empty() || a.cols() == 0) return out;
  MutMap(out.storage().data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())).noalias() = view(a) * view(b);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_string(a.shape()) + "^T by " +
                         shape_string(b.shape()));
  }
  Tensor out({a.cols(), b.cols()});
  if (out.empty() || a.rows() == 0) return out;
  MutMap(out.storage().data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())).noalias() = view(a).transpose() * view(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()) + "^T");
  }
  Tensor out({a.rows(), b.rows()});
  if (out.empty() || a.cols() == 0) return out;
  MutMap(out.storage().data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())).noalias() = view(a) * view(b).transpose();
  return out;
}

Tensor column_sum(const Tensor& x) {
  require_rank2(x, "column_sum");
  Tensor out({x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  return out;
}

Tensor column_mean(const Tensor& x) {
  Tensor out = column_sum(x);
  if (x.rows() > 0) scale_inplace(out, 1.0 / static_cast<double>(x.rows()));
  return out;
}

Tensor row_covariance(const Tensor& x, const Tensor& mean) {
  require_rank2(x, "row_covariance");
  const std::size_t b = x.rows();
  const std::size_t d = x.cols();
  if (mean.size() != d) throw DimensionError("row_covariance: mean length mismatch");
  Tensor centered = x;
  for (std::size_t r = 0; r < b; ++r) {
    auto row = centered.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] -= mean[c];
  }
  Tensor cov = matmul_tn(centered, centered);
  scale_inplace(cov, 1.0 / static_cast<double>(b));
  // Symmetrize exactly; the product is symmetric only up to rounding order.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) cov.at(j, i) = cov.at(i, j);
  return cov;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) {
    throw DimensionError("add: " + shape_string(dst.shape()) + " vs " + shape_string(src.shape()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void scale_inplace(Tensor& dst, double factor) {
  for (double& v : dst.storage()) v *= factor;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  if (begin > end || end > x.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t c = x.cols();
  std::vector<double> data(x.storage().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           x.storage().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor({end - begin, c}, std::move(data));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  if (begin > end || end > x.cols()) throw DimensionError("slice_cols: range out of bounds");
  Tensor out({x.rows(), end - begin});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto src = x.row(r);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
              src.begin() + static_cast<std::ptrdiff_t>(end), out.row(r).begin());
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_rank2(x, "gather_rows");
  Tensor out({indices.size(), x.cols()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    const auto src = x.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace mmfl
