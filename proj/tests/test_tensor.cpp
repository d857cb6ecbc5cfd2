#include <catch2/catch_amalgamated.hpp>

#include "poserec/rng.hpp"
#include "poserec/tensor.hpp"

using namespace poserec;

namespace {

// Independent triple-loop product used as the matmul oracle.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  }
  return c;
}

Tensor random_tensor(std::vector<std::size_t> dims, std::mt19937_64& g) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng::normal(g);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {5, 6, 7, 8});
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == m[i]);

  Tensor a({1, 1}, {2});
  Tensor b({1, 1}, {3});
  CHECK(matmul(a, b)[0] == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  auto g = rng::engine(101);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, g);
    Tensor b = random_tensor({4, 2}, g);
    Tensor got = matmul(a, b);
    Tensor want = matmul_oracle(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
  }
}

TEST_CASE("matmul shape error names both operands") {
  Tensor a({2, 3});
  Tensor b({2, 2});
  try {
    matmul(a, b);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("softmax symmetry and closed form") {
  Tensor u = softmax(Tensor({3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == Catch::Approx(1.0 / 3.0).epsilon(1e-14));

  // e/(e+1) closed form for [1, 0]
  Tensor y = softmax(Tensor({2}, {1, 0}));
  CHECK(y[0] == Catch::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(y[1] == Catch::Approx(0.2689414213699951).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
  auto g = rng::engine(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng::below(g, 8);
    Tensor x = random_tensor({n}, g);
    Tensor shifted = x;
    const double c = rng::uniform(g, -50.0, 50.0);
    for (double& v : shifted.data()) v += c;

    Tensor y = softmax(x);
    Tensor ys = softmax(shifted);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y[i] > 0.0);
      CHECK(std::abs(y[i] - ys[i]) < 1e-12);
      total += y[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax permutation equivariance") {
  auto g = rng::engine(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng::below(g, 6);
    Tensor x = random_tensor({n}, g);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng::shuffle(perm, g);

    Tensor xp({n});
    for (std::size_t i = 0; i < n; ++i) xp[i] = x[perm[i]];
    Tensor y = softmax(x);
    Tensor yp = softmax(xp);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(yp[i] - y[perm[i]]) < 1e-15);
  }
}

TEST_CASE("softmax rejects empty input") {
  CHECK_THROWS_AS(softmax(Tensor({0})), ShapeError);
}

TEST_CASE("cosine similarity trivial geometry") {
  Tensor v({3}, {1.0, -2.0, 0.5});
  Tensor nv({3}, {-1.0, 2.0, -0.5});
  CHECK(cosine_sim(v, v) == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(cosine_sim(v, nv) == Catch::Approx(-1.0).epsilon(1e-14));

  Tensor ex({2}, {1, 0});
  Tensor ey({2}, {0, 1});
  CHECK(cosine_sim(ex, ey) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("cosine similarity rejects degenerate vectors") {
  Tensor z({3});
  Tensor v({3}, {1, 2, 3});
  CHECK_THROWS_AS(cosine_sim(z, v), NumericError);
  CHECK_THROWS_AS(cosine_sim(v, z), NumericError);
  Tensor tiny({3}, {1e-13, 0, 0});
  CHECK_THROWS_AS(cosine_sim(tiny, v), NumericError);
}

TEST_CASE("cosine similarity scale invariance") {
  auto g = rng::engine(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng::below(g, 16);
    Tensor a = random_tensor({n}, g);
    Tensor b = random_tensor({n}, g);
    const double lambda = std::exp(rng::uniform(g, -6.0, 6.0));
    Tensor la = a;
    for (double& v : la.data()) v *= lambda;
    CHECK(std::abs(cosine_sim(la, b) - cosine_sim(a, b)) < 1e-12);
    CHECK(std::abs(cosine_sim(a, b)) <= 1.0 + 1e-15);
  }
}

TEST_CASE("tensor data length must match dims") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}
