#include <doctest.h>

#include <cmath>
#include <cstring>

#include "lobf/rng.hpp"
#include "lobf/tensor.hpp"

using namespace lobf;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and zero") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, a);
  CHECK(r.values() == std::vector<double>{1, 2, 3, 4});

  Tensor z = Tensor::from({2, 1}, {0, 0});
  Tensor rz = matmul(eye, z);
  CHECK(rz.values() == std::vector<double>{0, 0});
}

TEST_CASE("matmul shape errors name both shapes") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[3x4]"), ShapeError);
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[5x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});

  double err_a = grad_check(
      [&](Tape* tape, const Tensor& x) { return sum_all(matmul(x, b, tape), tape); }, a);
  CHECK(err_a < 1e-6);

  double err_b = grad_check(
      [&](Tape* tape, const Tensor& x) { return sum_all(matmul(a, x, tape), tape); }, b);
  CHECK(err_b < 1e-6);
}

TEST_CASE("elementwise op values") {
  Tensor x = Tensor::from({3}, {0.0, 0.0, -1.0});
  CHECK(tanh(x).data()[0] == 0.0);
  CHECK(sigmoid(x).data()[1] == 0.5);
  CHECK(leaky_relu(x).data()[2] == doctest::Approx(-0.01));

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({2}, {3, 5});
  CHECK(add(a, b).values() == std::vector<double>{4, 7});
  CHECK(mul(a, b).values() == std::vector<double>{3, 10});
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("softmax analytic values and row normalization") {
  Tensor x = Tensor::from({3}, {0, 0, 0});
  Tensor y = softmax(x, 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3.0));

  Tensor x2 = Tensor::from({2}, {std::log(2.0), 0.0});
  Tensor y2 = softmax(x2, 0);
  CHECK(y2.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(y2.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor r = random_tensor(rng, {4, 6}, -30.0, 30.0);
    Tensor s = softmax(r, 1);
    for (std::size_t row = 0; row < 4; ++row) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        double v = s.data()[row * 6 + c];
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tensor x = Tensor::from({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(softmax(x, 0), NumericError);
  Tensor inf = Tensor::from({2}, {1.0, INFINITY});
  CHECK_THROWS_AS(softmax(inf, 0), NumericError);
}

TEST_CASE("softmax Jacobian matches finite differences") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {5});
  for (std::size_t j = 0; j < 5; ++j) {
    auto pick_j = std::make_shared<std::vector<long>>(1, static_cast<long>(j));
    double err = grad_check(
        [&](Tape* tape, const Tensor& v) {
          return index_map(softmax(v, 0, tape), pick_j, {1}, tape);
        },
        x);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("grad_check trivial oracles") {
  // On an integer grid with a power-of-two step both the analytic gradient
  // and the central difference of sum() are exactly 1.
  Tensor xi = Tensor::from({7}, {1, -2, 3, 0, 5, -6, 7});
  double err_exact = grad_check(
      [](Tape* tape, const Tensor& v) { return sum_all(v, tape); }, xi, 0x1.0p-20);
  CHECK(err_exact == 0.0);

  Rng rng(5);
  Tensor x = random_tensor(rng, {7});
  double err = grad_check([](Tape* tape, const Tensor& v) { return sum_all(v, tape); }, x);
  CHECK(err < 1e-10);

  Tensor p = Tensor::from({3}, {1, 2, 3});
  Tape tape;
  Tensor loss = sum_all(mul(p, p, &tape), &tape);
  tape.backward(loss);
  CHECK(p.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(p.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(p.grad()[2] == doctest::Approx(6.0).epsilon(1e-12));

  double err_sq =
      grad_check([](Tape* tape, const Tensor& v) { return sum_all(mul(v, v, tape), tape); }, p);
  CHECK(err_sq < 1e-8);
}

TEST_CASE("grad_check rejects non-scalar output") {
  Tensor x = Tensor::zeros({2});
  CHECK_THROWS_AS(
      grad_check([](Tape* tape, const Tensor& v) { return add(v, v, tape); }, x),
      ContractError);
}

TEST_CASE("every elementwise op passes grad_check on random inputs") {
  Rng rng(17);
  for (int seed_trial = 0; seed_trial < 10; ++seed_trial) {
    Tensor x = random_tensor(rng, {6}, -2.0, 2.0);
    Tensor other = random_tensor(rng, {6}, -2.0, 2.0);

    auto check = [&](const std::function<Tensor(Tape*, const Tensor&)>& f) {
      CHECK(grad_check(f, x) < 1e-6);
    };
    check([&](Tape* t, const Tensor& v) { return sum_all(tanh(v, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(sigmoid(v, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(mul(leaky_relu(v, 0.01, t), v, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(add(v, other, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(sub(other, v, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(mul(v, other, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(scale(v, -1.7, t), t); });
    check([&](Tape* t, const Tensor& v) { return sum_all(mul(softmax(v, 0, t), other, t), t); });
    check([&](Tape* t, const Tensor& v) {
      return sum_all(log(clamp_min(sigmoid(v, t), 1e-12, t), t), t);
    });
    check([&](Tape* t, const Tensor& v) { return sum_all(transpose2d(reshape(v, {2, 3}, t), t), t); });
    check([&](Tape* t, const Tensor& v) {
      std::vector<Tensor> parts{reshape(v, {2, 3}, t), reshape(other, {2, 3}, t)};
      return sum_all(mul(concat(parts, 1, t), concat(parts, 1, t), t), t);
    });
    check([&](Tape* t, const Tensor& v) {
      Tensor m = reshape(v, {2, 3}, t);
      return sum_all(mul(chunk_cols(m, 1, 3, t), chunk_cols(m, 0, 2, t), t), t);
    });
    check([&](Tape* t, const Tensor& v) {
      Tensor col = reshape(chunk_cols(reshape(v, {2, 3}, t), 0, 1, t), {2, 1}, t);
      return sum_all(mul(tile_cols(col, 4, t), tile_cols(col, 4, t), t), t);
    });
    check([&](Tape* t, const Tensor& v) {
      return sum_all(mul(expand_rows(v, 3, t), expand_rows(other, 3, t), t), t);
    });
  }
}

TEST_CASE("gradient accumulates across reuse") {
  // y = x*x + x: dy/dx = 2x + 1 exercised through two separate uses of x.
  Tensor x = Tensor::from({1}, {3.0});
  Tape tape;
  Tensor y = sum_all(add(mul(x, x, &tape), x, &tape), &tape);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("forward is bitwise deterministic") {
  Rng rng(23);
  Tensor a = random_tensor(rng, {8, 8});
  Tensor b = random_tensor(rng, {8, 8});
  Tensor r1 = tanh(matmul(softmax(a, 1), b));
  Tensor r2 = tanh(matmul(softmax(a, 1), b));
  CHECK(std::memcmp(r1.data(), r2.data(), r1.numel() * sizeof(double)) == 0);
}

TEST_CASE("tape backward requires scalar output") {
  Tensor x = Tensor::zeros({2});
  Tape tape;
  Tensor y = add(x, x, &tape);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("index_map zero-fills negative indices") {
  Tensor x = Tensor::from({3}, {5, 6, 7});
  auto idx = std::make_shared<std::vector<long>>(std::vector<long>{2, -1, 0, -1});
  Tensor y = index_map(x, idx, {4});
  CHECK(y.values() == std::vector<double>{7, 0, 5, 0});

  Tape tape;
  Tensor x2 = Tensor::from({3}, {5, 6, 7});
  Tensor y2 = index_map(x2, idx, {4}, &tape);
  Tensor s = sum_all(y2, &tape);
  tape.backward(s);
  CHECK(x2.grad()[0] == 1.0);
  CHECK(x2.grad()[1] == 0.0);
  CHECK(x2.grad()[2] == 1.0);
}
