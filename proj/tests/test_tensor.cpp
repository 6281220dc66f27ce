// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "ssar/gradcheck.hpp"
#include "ssar/nn.hpp"
#include "ssar/ops.hpp"

using namespace ssar;

namespace {

GradCheckOptions strict() {
  GradCheckOptions o;
  o.eps = 1e-4;
  o.tol = 1e-3;
  return o;
}

// Scalar readout with a fixed random projection so every output element
// carries a distinct weight.
Tensor project(const Tensor& y, std::uint64_t seed) {
  const auto w = oracle::random_tensor(y.shape(), seed, y.dtype(), false);
  return sum(mul(y, w));
}

void check_grad(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  const auto report = finite_diff_check(f, std::move(params), strict());
  INFO(report.failure);
  CHECK(report.passed);
}

}  // namespace

TEST_CASE("tensor_create") {
  const auto t = Tensor::create({2, 2}, {1, 2, 3, 4});
  CHECK(t.at({1, 1}) == 4);
  CHECK(t.at({0, 1}) == 2);
  CHECK_FALSE(t.requires_grad());
  CHECK(Tensor::create({1}, {0}).item() == 0);
  CHECK_THROWS_AS(Tensor::create({2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::create({0}, {}), ShapeError);
}

TEST_CASE("elementwise forward") {
  const auto a = Tensor::create({2}, {1, 2});
  CHECK(add(a, Tensor::create({2}, {3, 4})).to_vector() == std::vector<double>{4, 6});
  CHECK(mul(Tensor::create({2}, {2, 3}), Tensor::create({2}, {0, 5})).to_vector() ==
        std::vector<double>{0, 15});
  CHECK(sub(a, Tensor::create({2}, {3, 1})).to_vector() == std::vector<double>{-2, 1});
  CHECK(maximum(a, Tensor::create({2}, {0, 5})).to_vector() == std::vector<double>{1, 5});

  SUBCASE("trailing singleton broadcast") {
    const auto m = Tensor::create({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto col = Tensor::create({2, 1}, {10, 20});
    CHECK(add(m, col).to_vector() == std::vector<double>{11, 12, 13, 24, 25, 26});
    CHECK(add(m, Tensor::create({2}, {1, 2})).to_vector() ==
          std::vector<double>{2, 3, 4, 6, 7, 8});
  }
  SUBCASE("incompatible shapes") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({1, 3})), ShapeError);
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({2}, DType::f64)), ShapeError);
  }
}

TEST_CASE("add backward matches central differences") {
  auto a = oracle::random_tensor({3, 4}, 1);
  auto b = oracle::random_tensor({3, 4}, 2);
  check_grad([&] { return project(add(a, b), 3); }, {a, b});
}

TEST_CASE("matmul") {
  const auto eye = Tensor::create({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::create({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).to_vector() == m.to_vector());
  CHECK(matmul(Tensor::create({1, 2}, {1, 2}), Tensor::create({2, 1}, {3, 4})).item() == 11);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);

  auto a = oracle::random_tensor({3, 4}, 4);
  auto b = oracle::random_tensor({4, 2}, 5);
  check_grad([&] { return project(matmul(a, b), 6); }, {a, b});
}

TEST_CASE("backward") {
  SUBCASE("sum") {
    auto x = Tensor::create({3}, {1, 2, 3}).set_requires_grad(true);
    backward(sum(x));
    CHECK(x.grad().to_vector() == std::vector<double>{1, 1, 1});
  }
  SUBCASE("sum of squares") {
    auto x = Tensor::create({2}, {1, 2}).set_requires_grad(true);
    backward(sum(mul(x, x)));
    CHECK(x.grad().to_vector() == std::vector<double>{2, 4});
  }
  SUBCASE("shared subexpression sums path contributions") {
    auto x = oracle::random_tensor({4}, 7);
    auto f = [&] {
      const Tensor s = tanh(x);
      return sum(add(mul(s, x), sigmoid(s)));
    };
    check_grad(f, {x});
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = Tensor::create({2}, {1, 2}).set_requires_grad(true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  }
  SUBCASE("unused leaf reachable through graph still gets a zero grad") {
    auto x = Tensor::create({2}, {1, 2}).set_requires_grad(true);
    auto y = Tensor::create({2}, {3, 4}).set_requires_grad(true);
    backward(sum(maximum(x, y)));
    CHECK(x.grad().to_vector() == std::vector<double>{0, 0});
    CHECK(y.grad().to_vector() == std::vector<double>{1, 1});
  }
}

TEST_CASE("backward twice without zeroing doubles leaf grads exactly") {
  auto x = oracle::random_tensor({5}, 8, DType::f32);
  auto f = [&] { return sum(mul(sigmoid(x), add(x, tanh(x)))); };
  backward(f());
  const auto once = x.grad().to_vector();
  backward(f());
  const auto twice = x.grad().to_vector();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == 2 * once[i]);
}

TEST_CASE("forward results are bitwise reproducible") {
  const auto a = oracle::random_tensor({7, 9}, 9, DType::f32, false);
  const auto b = oracle::random_tensor({9, 5}, 10, DType::f32, false);
  const auto r1 = matmul(a, b), r2 = matmul(a, b);
  CHECK(std::memcmp(r1.values<float>().data(), r2.values<float>().data(), 35 * sizeof(float)) == 0);
}

TEST_CASE("finite_diff_check") {
  SUBCASE("sum is exactly linear") {
    auto p = oracle::random_tensor({2, 3}, 11);
    const auto report = finite_diff_check([&] { return sum(p); }, {p}, strict());
    CHECK(report.passed);
    CHECK(report.params[0].max_rel_error < 1e-9);
  }
  SUBCASE("conv + relu on a 1x1x5x5 input") {
    auto x = oracle::random_tensor({1, 1, 5, 5}, 12);
    auto w = oracle::random_tensor({2, 1, 3, 3}, 13);
    auto b = oracle::random_tensor({2}, 14);
    check_grad([&] { return project(relu(nn::conv2d(x, w, b, {1, 1, 1})), 15); }, {x, w, b});
  }
  SUBCASE("a wrong backward rule is caught") {
    auto x = oracle::random_tensor({3}, 16);
    auto doubled_grad = [](const Tensor& in) {
      return make_result(in.shape(), in.buffer(), "bad_identity", {in},
                         [](const Buffer& g) {
                           auto v = buffer_as<double>(g);
                           for (auto& e : v) e *= 2;
                           return std::vector<std::optional<Buffer>>{Buffer{v}};
                         });
    };
    const auto report =
        finite_diff_check([&] { return project(doubled_grad(x), 17); }, {x}, strict());
    CHECK_FALSE(report.passed);
    CHECK(report.failure.find("param 0") != std::string::npos);
  }
  SUBCASE("non-finite values are reported with their location") {
    auto x = Tensor::create({2}, {-1.0, 1.0}, DType::f64).set_requires_grad(true);
    auto f = [&] {
      return sum(make_result(x.shape(), Buffer{std::vector<double>{std::log(x.flat(0)),
                                                                   std::log(x.flat(1))}},
                             "log", {x}, [](const Buffer& g) {
                               return std::vector<std::optional<Buffer>>{g};
                             }));
    };
    const auto report = finite_diff_check(f, {x}, strict());
    CHECK_FALSE(report.passed);
    CHECK(report.failure == "non-finite value at param 0 element 0");
  }
}

TEST_CASE("every tensor op passes the gradient check on three random shapes") {
  const std::vector<Shape> shapes{{3, 4}, {2, 5}, {4, 3}};
  std::uint64_t seed = 100;
  for (const auto& s : shapes) {
    CAPTURE(shape_str(s));
    auto a = oracle::random_tensor(s, ++seed);
    auto b = oracle::random_tensor(s, ++seed);
    auto col = oracle::random_tensor({s[0], 1}, ++seed);
    const auto proj = ++seed;
    check_grad([&] { return project(sub(a, b), proj); }, {a, b});
    check_grad([&] { return project(mul(a, b), proj); }, {a, b});
    check_grad([&] { return project(maximum(a, b), proj); }, {a, b});
    check_grad([&] { return project(mul(a, col), proj); }, {a, col});
    check_grad([&] { return project(add(a, col), proj); }, {a, col});
    check_grad([&] { return project(scale(a, -1.7), proj); }, {a});
    check_grad([&] { return project(add_scalar(a, 0.3), proj); }, {a});
    check_grad([&] { return mean(mul(a, b)); }, {a, b});
    check_grad([&] { return project(relu(a), proj); }, {a});
    check_grad([&] { return project(sigmoid(a), proj); }, {a});
    check_grad([&] { return project(tanh(a), proj); }, {a});
    check_grad([&] { return project(reshape(a, {s[1], s[0]}), proj); }, {a});
    check_grad([&] { return project(slice_cols(a, 1, 2), proj); }, {a});
    check_grad([&] { return project(select(a, 1), proj); }, {a});
    check_grad([&] { return project(stack({a, b, a}), proj); }, {a, b});
    auto bt = oracle::random_tensor({s[1], s[0]}, ++seed);
    check_grad([&] { return project(matmul(a, bt), proj); }, {a, bt});
    const std::vector<std::int64_t> which{1, 0, 2, 1, 0};
    auto r0 = oracle::random_tensor({s[0], 3}, ++seed);
    auto r1 = oracle::random_tensor({s[0], 3}, ++seed);
    auto r2 = oracle::random_tensor({s[0], 3}, ++seed);
    check_grad([&] {
      return project(take_rows({r0, r1, r2}, std::span(which).first(static_cast<std::size_t>(s[0]))),
                     proj);
    }, {r0, r1, r2});
  }
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor::create({2}, {1, 2}).set_requires_grad(true);
  NoGradGuard guard;
  const auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}
