#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mmfl/binary_io.hpp"
#include "mmfl/error.hpp"
#include "mmfl/random.hpp"
#include "mmfl/tensor.hpp"
#include "oracles.hpp"

using namespace mmfl;

TEST_CASE("matmul variants agree with the naive product") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = oracle::random_matrix(rng, 5, 3);
    const Tensor b = oracle::random_matrix(rng, 3, 4);
    const Tensor ref = oracle::naive_matmul(a, b);
    CHECK(max_abs_diff(matmul(a, b), ref) < 1e-12);
    CHECK(max_abs_diff(matmul_tn(a.transposed(), b), ref) < 1e-12);
    CHECK(max_abs_diff(matmul_nt(a, b.transposed()), ref) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("column reductions and covariance") {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 6}, {5, 4}});
  CHECK(column_sum(x) == Tensor::vector({9, 12}));
  const Tensor mean = column_mean(x);
  CHECK(mean == Tensor::vector({3, 4}));
  const Tensor cov = row_covariance(x, mean);
  // divisor B: var0 = (4+0+4)/3, var1 = (4+4+0)/3, cov01 = (4+0+0)/3
  CHECK(cov.at(0, 0) == doctest::Approx(8.0 / 3.0));
  CHECK(cov.at(1, 1) == doctest::Approx(8.0 / 3.0));
  CHECK(cov.at(0, 1) == doctest::Approx(4.0 / 3.0));
  CHECK(cov.at(0, 1) == cov.at(1, 0));
}

TEST_CASE("slicing and gathering") {
  const Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  CHECK(slice_rows(x, 1, 3) == Tensor::matrix({{4, 5, 6}, {7, 8, 9}}));
  CHECK(slice_cols(x, 0, 2) == Tensor::matrix({{1, 2}, {4, 5}, {7, 8}}));
  const std::vector<std::size_t> idx{2, 0};
  CHECK(gather_rows(x, idx) == Tensor::matrix({{7, 8, 9}, {1, 2, 3}}));
  CHECK(x.transposed().transposed() == x);
}

TEST_CASE("finite checks name the offender") {
  Tensor t = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("probe"), NumericError);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const double u = uniform01(a);
    CHECK(u == uniform01(b));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("byte reader reports truncation with an offset") {
  ByteWriter w;
  w.u32(7);
  w.f64(2.5);
  std::vector<std::uint8_t> bytes = w.buffer();
  {
    ByteReader r(bytes);
    CHECK(r.u32("count") == 7u);
    CHECK(r.f64("value") == 2.5);
    r.expect_end("record");
  }
  bytes.resize(6);
  ByteReader r(bytes);
  r.u32("count");
  try {
    r.f64("value");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4u);
  }
}
