#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"
#include "mwp/tensor.hpp"

using namespace mwp;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  Tensor t = Tensor::from_vector(std::move(shape), std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

// Central-difference oracle: perturbs leaf coordinates and re-runs the
// forward closure, never consulting recorded backward rules.
double max_rel_grad_error(std::vector<Tensor>& leaves,
                          const std::function<Tensor()>& forward, double h = 1e-5) {
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = forward();
  }
  tape.backward(loss);
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const double* g = leaf.grad_data();
    REQUIRE(g != nullptr);
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      double saved = leaf.data()[i];
      leaf.data()[i] = saved + h;
      double fp = forward().item();
      leaf.data()[i] = saved - h;
      double fm = forward().item();
      leaf.data()[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      double denom = std::fabs(g[i]) + std::fabs(numeric);
      if (denom > 1e-8) worst = std::max(worst, std::fabs(g[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul forward basics") {
  Tensor eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor m = Tensor::from_vector({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.at(i) == m.at(i));

  Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_vector({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(2.0));
  CHECK(c.at(1, 0) == doctest::Approx(4.0));

  CHECK_THROWS_WITH_AS(matmul(a, Tensor::zeros({3, 2})),
                       doctest::Contains("[2x2]"), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 5}, rng);
  std::vector<Tensor> leaves{a, b};
  double err = max_rel_grad_error(leaves, [&]() { return sum_all(matmul(a, b)); });
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise op values") {
  Tensor x = Tensor::from_vector({3}, {-1.5, 0.0, 2.0});
  Tensor r = relu(x);
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 2.0);

  CHECK(ln1p(Tensor::scalar(0.0)).item() == 0.0);
  CHECK_THROWS_AS(ln1p(Tensor::scalar(-1.0)), DomainError);

  Tensor s = softmax_lastdim(Tensor::from_vector({1, 3}, {0, 0, 0}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(s.at(j) == doctest::Approx(1.0 / 3.0));

  CHECK(mwp::abs(Tensor::scalar(-2.5)).item() == 2.5);
  CHECK(mwp::exp(Tensor::scalar(0.0)).item() == 1.0);
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
}

TEST_CASE("softmax rows sum to one and stay positive") {
  Rng rng(7);
  std::vector<double> v(6 * 9);
  for (auto& x : v) x = rng.uniform(-30.0, 30.0);
  Tensor s = softmax_lastdim(Tensor::from_vector({6, 9}, std::move(v)));
  for (std::size_t i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(s.at(i, j) > 0.0);
      sum += s.at(i, j);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm closed-form rows") {
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::zeros({2});
  Tensor y = layer_norm(Tensor::from_vector({1, 2}, {1.0, 3.0}), gamma, beta, 1e-12);
  CHECK(y.at(0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-9));

  Tensor c = layer_norm(Tensor::full({1, 4}, 5.0), Tensor::full({4}, 1.0),
                        Tensor::zeros({4}), 1e-5);
  for (std::size_t j = 0; j < 4; ++j) CHECK(c.at(j) == 0.0);
}

TEST_CASE("unary and normalization gradients match finite differences") {
  Rng rng(23);
  for (auto kind : {0, 1, 2, 3, 4}) {
    Tensor x = random_tensor({4, 6}, rng);
    if (kind == 2) {  // keep ln1p inside its domain
      for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(-0.5, 3.0);
    }
    std::vector<Tensor> leaves{x};
    auto op = [&](const Tensor& t) {
      switch (kind) {
        case 0: return gelu(t);
        case 1: return mwp::exp(t);
        case 2: return ln1p(t);
        case 3: return softmax_lastdim(t);
        default: return scale(t, -1.7);
      }
    };
    Rng wr(99);
    Tensor w = random_tensor({4, 6}, wr, false);
    double err = max_rel_grad_error(leaves, [&]() { return sum_all(mul(op(x), w)); });
    CAPTURE(kind);
    CHECK(err < 1e-4);
  }

  Tensor x = random_tensor({3, 8}, rng);
  Tensor g = random_tensor({8}, rng);
  Tensor b = random_tensor({8}, rng);
  std::vector<Tensor> leaves{x, g, b};
  Rng wr(5);
  Tensor w = random_tensor({3, 8}, wr, false);
  double err =
      max_rel_grad_error(leaves, [&]() { return sum_all(mul(layer_norm(x, g, b, 1e-5), w)); });
  CHECK(err < 1e-4);
}

TEST_CASE("broadcast add/mul/sub") {
  Tensor m = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from_vector({3}, {10, 20, 30});
  Tensor s = add(m, row);
  CHECK(s.at(0, 0) == 11.0);
  CHECK(s.at(1, 2) == 36.0);

  Tensor k = mul(m, Tensor::scalar(2.0));
  CHECK(k.at(1, 1) == 10.0);

  Tensor d = sub(Tensor::scalar(1.0), m);
  CHECK(d.at(0, 2) == -2.0);

  CHECK_THROWS_AS(add(m, Tensor::zeros({2})), DimensionError);

  Rng rng(3);
  Tensor a = random_tensor({5, 4}, rng);
  Tensor r = random_tensor({4}, rng);
  std::vector<Tensor> leaves{a, r};
  double err = max_rel_grad_error(leaves, [&]() { return sum_all(mul(add(a, r), a)); });
  CHECK(err < 1e-6);
}

TEST_CASE("structural op gradients") {
  Rng rng(17);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor t2 = random_tensor({2, 6}, rng);
  std::vector<Tensor> leaves{x, t2};
  double err = max_rel_grad_error(leaves, [&]() {
    Tensor tr = transpose(x);                       // 6x4
    Tensor sl = slice_cols(x, 1, 3);                // 4x3
    Tensor cat = concat_rows({x, t2});              // 6x6
    Tensor cc = concat_cols({sl, slice_cols(x, 0, 2)});
    Tensor row = select_row(t2, 1);
    Tensor re = reshape(tr, {4, 6});
    return add(add(sum_all(cat), sum_all(cc)),
               add(sum_all(row), add(sum_all(re), mean_all(mul(x, x)))));
  });
  CHECK(err < 1e-6);

  CHECK_THROWS_AS(select_row(x, 9), ValidationError);
  CHECK_THROWS_AS(slice_cols(x, 5, 3), DimensionError);
  CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
}

TEST_CASE("backward on a leaf and accumulation semantics") {
  Tensor x = Tensor::from_vector({1}, {4.0});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(x);
  }
  CHECK(x.grad_data()[0] == 1.0);

  Tensor y = Tensor::from_vector({2}, {1.0, 2.0});
  y.set_requires_grad(true);
  Tape t2;
  Tensor loss;
  {
    TapeScope scope(t2);
    loss = sum_all(mul(y, y));
  }
  t2.backward(loss);
  CHECK(y.grad_data()[0] == doctest::Approx(2.0));
  CHECK(y.grad_data()[1] == doctest::Approx(4.0));

  t2.backward(loss);  // repeated call accumulates into leaves
  CHECK(y.grad_data()[0] == doctest::Approx(4.0));
  CHECK(y.grad_data()[1] == doctest::Approx(8.0));

  y.zero_grad();
  t2.backward(loss);
  CHECK(y.grad_data()[0] == doctest::Approx(2.0));

  Tape t3;
  Tensor big;
  {
    TapeScope scope(t3);
    big = mul(y, y);
  }
  CHECK_THROWS_AS(t3.backward(big), ValidationError);
}

TEST_CASE("ops outside a tape stay pure and untracked") {
  Tensor x = Tensor::from_vector({2}, {1.0, -1.0});
  x.set_requires_grad(true);
  Tensor r = relu(x);
  CHECK_FALSE(r.requires_grad());
  CHECK(r.is_leaf());
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("forward evaluation is deterministic") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor({7, 5}, rng, false);
    Tensor b = random_tensor({5, 4}, rng, false);
    Tensor g = random_tensor({4}, rng, false);
    Tensor bb = random_tensor({4}, rng, false);
    return layer_norm(gelu(matmul(a, b)), g, bb, 1e-5);
  };
  Tensor r1 = run(42);
  Tensor r2 = run(42);
  for (std::size_t i = 0; i < r1.numel(); ++i) CHECK(r1.at(i) == r2.at(i));
}

TEST_CASE("independent tapes run on separate threads") {
  auto work = [](double& out) {
    Rng rng(13);
    Tensor x = random_tensor({8, 8}, rng);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum_all(mul(gelu(x), x));
    }
    tape.backward(loss);
    out = x.grad_data()[5];
  };
  double a = 0.0, b = 0.0;
  std::thread ta(work, std::ref(a));
  std::thread tb(work, std::ref(b));
  ta.join();
  tb.join();
  CHECK(a == b);
  CHECK(a != 0.0);
}

TEST_CASE("dropout scales surviving activations and is identity in eval") {
  Rng rng(31);
  Tensor x = Tensor::full({1000}, 1.0);
  Tensor kept = dropout(x, 0.25, false, nullptr);
  CHECK(kept.data() == x.data());

  Tensor d = dropout(x, 0.25, true, &rng);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < d.numel(); ++i) {
    if (d.at(i) == 0.0)
      ++zeros;
    else
      CHECK(d.at(i) == doctest::Approx(1.0 / 0.75));
  }
  CHECK(zeros > 150);
  CHECK(zeros < 350);
}

TEST_CASE("kink distance is tracked for relu and abs") {
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor x = Tensor::from_vector({3}, {0.5, -0.002, 7.0});
    x.set_requires_grad(true);
    relu(x);
  }
  CHECK(tape.min_kink_distance() == doctest::Approx(0.002));
}
