#include "dynamarl/rng.hpp"
#include "dynamarl/tensor.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace dynamarl;

TEST_CASE("tensor factories and accessors") {
  Tensor z = Tensor::zeros({2, 3});
  REQUIRE(z.rank() == 2);
  REQUIRE(z.numel() == 6);
  REQUIRE(z.rows() == 2);
  REQUIRE(z.cols() == 3);
  for (std::int64_t i = 0; i < z.numel(); ++i) REQUIRE(z[i] == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  REQUIRE(f.rank() == 1);
  REQUIRE(f[3] == 2.5);

  Tensor s = Tensor::scalar(-7.0);
  REQUIRE(s.numel() == 1);
  REQUIRE(s[0] == -7.0);

  Tensor r = Tensor::row({1.0, 2.0, 3.0});
  REQUIRE(r.rank() == 2);
  REQUIRE(r.dim(0) == 1);
  REQUIRE(r.dim(1) == 3);
  REQUIRE(r.at2(0, 2) == 3.0);

  REQUIRE(Tensor::shape_string({2, 3, 4}) == "[2x3x4]");
}

TEST_CASE("tensor rejects non-positive dims") {
  REQUIRE_THROWS_AS(Tensor::zeros({2, 0}), std::invalid_argument);
  REQUIRE_THROWS_AS(Tensor::zeros({-1}), std::invalid_argument);
}

TEST_CASE("gemm matches hand-computed product") {
  // A = [[1,2,3],[4,5,6]], B = [[7,8],[9,10],[11,12]]
  // AB = [[58,64],[139,154]]
  const double a[] = {1, 2, 3, 4, 5, 6};
  const double b[] = {7, 8, 9, 10, 11, 12};
  double c[4] = {0, 0, 0, 0};
  gemm_block(a, 2, 3, false, b, 3, 2, false, c, false);
  REQUIRE(c[0] == 58.0);
  REQUIRE(c[1] == 64.0);
  REQUIRE(c[2] == 139.0);
  REQUIRE(c[3] == 154.0);
}

TEST_CASE("gemm transpose combinations") {
  // A = [[1,2],[3,4]]
  const double a[] = {1, 2, 3, 4};
  double c[4];

  // A^T A = [[10,14],[14,20]]
  std::fill(c, c + 4, 0.0);
  gemm_block(a, 2, 2, true, a, 2, 2, false, c, false);
  REQUIRE(c[0] == 10.0);
  REQUIRE(c[1] == 14.0);
  REQUIRE(c[2] == 14.0);
  REQUIRE(c[3] == 20.0);

  // A A^T = [[5,11],[11,25]]
  std::fill(c, c + 4, 0.0);
  gemm_block(a, 2, 2, false, a, 2, 2, true, c, false);
  REQUIRE(c[0] == 5.0);
  REQUIRE(c[1] == 11.0);
  REQUIRE(c[2] == 11.0);
  REQUIRE(c[3] == 25.0);

  // A^T A^T = (A A)^T; A A = [[7,10],[15,22]] so result = [[7,15],[10,22]]
  std::fill(c, c + 4, 0.0);
  gemm_block(a, 2, 2, true, a, 2, 2, true, c, false);
  REQUIRE(c[0] == 7.0);
  REQUIRE(c[1] == 15.0);
  REQUIRE(c[2] == 10.0);
  REQUIRE(c[3] == 22.0);
}

TEST_CASE("gemm accumulate adds into destination") {
  const double a[] = {1, 0, 0, 1};
  const double b[] = {2, 3, 4, 5};
  double c[] = {10, 10, 10, 10};
  gemm_block(a, 2, 2, false, b, 2, 2, false, c, true);
  REQUIRE(c[0] == 12.0);
  REQUIRE(c[1] == 13.0);
  REQUIRE(c[2] == 14.0);
  REQUIRE(c[3] == 15.0);
}

TEST_CASE("gemm against naive triple loop on random dims") {
  std::uint64_t st = 99;
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(splitmix64(st) % 7);
    const int k = 1 + static_cast<int>(splitmix64(st) % 7);
    const int n = 1 + static_cast<int>(splitmix64(st) % 7);
    std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n);
    for (double& v : a) v = static_cast<double>(splitmix64(st) % 19) - 9.0;
    for (double& v : b) v = static_cast<double>(splitmix64(st) % 19) - 9.0;
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0), ref(c);
    gemm_block(a.data(), m, k, false, b.data(), k, n, false, c.data(), false);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(t) * n + j];
        ref[static_cast<std::size_t>(i) * n + j] = s;
      }
    for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(c[i] == Catch::Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("checksum is stable and content-sensitive") {
  Tensor a = Tensor::row({1.0, 2.0, 3.0});
  Tensor b = Tensor::row({1.0, 2.0, 3.0});
  REQUIRE(checksum(a) == checksum(b));
  b[2] = 3.0000000001;
  REQUIRE(checksum(a) != checksum(b));
}

TEST_CASE("all_finite flags inf and nan") {
  Tensor a = Tensor::row({1.0, 2.0});
  REQUIRE(a.all_finite());
  a[0] = std::numeric_limits<double>::infinity();
  REQUIRE_FALSE(a.all_finite());
  a[0] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_FALSE(a.all_finite());
}
