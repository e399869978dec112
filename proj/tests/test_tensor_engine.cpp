#include <doctest.h>

#include <cmath>
#include <random>

#include "emoshift/ops.hpp"
#include "emoshift/optim.hpp"
#include "support/finite_diff.hpp"

using namespace emoshift;
using emoshift::testing::check_gradients;
using emoshift::testing::random_matrix;

namespace {

// Weighted sum with fixed random weights so every output entry gets a distinct upstream gradient.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = y.tape->constant(random_matrix(y.rows(), y.cols(), rng));
  return ops::sum(ops::mul(y, w));
}

}  // namespace

TEST_SUITE("matmul") {
  TEST_CASE("identity and zero cases") {
    Tape<double> tape;
    auto eye = tape.constant(Tensor<double>::from_rows({{1, 0}, {0, 1}}));
    auto b = tape.constant(Tensor<double>::from_rows({{1, 2}, {3, 4}}));
    CHECK(ops::matmul(eye, b).value() == Tensor<double>::from_rows({{1, 2}, {3, 4}}));
    auto r = tape.constant(Tensor<double>::from_rows({{1, 2}}));
    auto z = tape.constant(Tensor<double>::from_rows({{0}, {0}}));
    CHECK(ops::matmul(r, z).value() == Tensor<double>::from_rows({{0}}));
  }

  TEST_CASE("shape mismatch names both shapes") {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>::matrix(2, 3));
    auto b = tape.constant(Tensor<double>::matrix(2, 3));
    try {
      ops::matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2 x 3] x [2 x 3]") != std::string::npos);
    }
  }

  TEST_CASE("gradient of sum(AB) w.r.t. A is row sums of B broadcast") {
    std::mt19937_64 rng(1);
    Parameter<double> A("A", random_matrix(3, 4, rng));
    Parameter<double> B("B", random_matrix(4, 5, rng));
    Tape<double> tape;
    tape.backward(ops::sum(ops::matmul(tape.param(A), tape.param(B))));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        double rs = 0;
        for (std::size_t j = 0; j < 5; ++j) rs += B.value(k, j);
        CHECK(A.grad(i, k) == doctest::Approx(rs).epsilon(1e-12));
      }
    }
    auto rep = check_gradients({&A, &B}, [&](Tape<double>& t) { return ops::sum(ops::matmul(t.param(A), t.param(B))); },
                               40, 2);
    CHECK(rep.max_rel_error <= 1e-6);
  }
}

TEST_SUITE("softmax_rows") {
  TEST_CASE("zero row is uniform") {
    Tape<double> tape;
    auto y = ops::softmax_rows(tape.constant(Tensor<double>::matrix(1, 4)));
    for (auto v : y.value().vec()) CHECK(v == 0.25);
  }

  TEST_CASE("large logits do not overflow") {
    Tape<double> tape;
    auto y = ops::softmax_rows(tape.constant(Tensor<double>::from_rows({{1000, 0}})));
    CHECK(std::abs(y.value()[0] - 1.0) <= 1e-9);
    CHECK(std::abs(y.value()[1]) <= 1e-9);
  }

  TEST_CASE("rows sum to one for arbitrary finite inputs") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      Tape<double> tape;
      auto y = ops::softmax_rows(tape.constant(random_matrix(4, 9, rng, -300, 300)));
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (auto v : y.value().row(r)) {
          CHECK(v >= 0);
          s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("jacobian-vector product matches finite differences") {
    std::mt19937_64 rng(4);
    Parameter<double> X("x", random_matrix(3, 6, rng));
    auto rep = check_gradients({&X}, [&](Tape<double>& t) { return weighted_sum(ops::softmax_rows(t.param(X)), 9); }, 30, 5);
    CHECK(rep.max_rel_error <= 1e-6);
  }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("uniform logits give ln V") {
    Tape<double> tape;
    std::vector<int> tgt{0, 3, 7};
    std::vector<std::uint8_t> mask{1, 1, 1};
    auto loss = ops::cross_entropy(tape.constant(Tensor<double>::matrix(3, 8)), tgt, mask);
    CHECK(loss.value().item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }

  TEST_CASE("near one-hot logits give ~0 loss") {
    Tape<double> tape;
    Tensor<double> l = Tensor<double>::matrix(2, 5);
    l(0, 1) = 50;
    l(1, 4) = 50;
    std::vector<int> tgt{1, 4};
    std::vector<std::uint8_t> mask{1, 1};
    CHECK(ops::cross_entropy(tape.constant(l), tgt, mask).value().item() <= 1e-6);
  }

  TEST_CASE("two-position case matches scalar evaluation") {
    // -log sigma: row [1,0] target 0 -> log(1+e^-1); row [0,2] target 1 -> log(1+e^-2).
    const double expected = 0.5 * (std::log1p(std::exp(-1.0)) + std::log1p(std::exp(-2.0)));
    Tape<double> tape;
    std::vector<int> tgt{0, 1};
    std::vector<std::uint8_t> mask{1, 1};
    auto loss = ops::cross_entropy(tape.constant(Tensor<double>::from_rows({{1, 0}, {0, 2}})), tgt, mask);
    CHECK(loss.value().item() == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("empty mask is an error") {
    Tape<double> tape;
    std::vector<int> tgt{0};
    std::vector<std::uint8_t> mask{0};
    CHECK_THROWS_WITH(ops::cross_entropy(tape.constant(Tensor<double>::matrix(1, 3)), tgt, mask), "no supervised positions");
  }

  TEST_CASE("masked rows have exactly zero gradient") {
    std::mt19937_64 rng(6);
    Parameter<double> L("logits", random_matrix(6, 7, rng));
    std::vector<int> tgt{1, 2, 3, 4, 5, 6};
    std::vector<std::uint8_t> mask{0, 1, 0, 1, 1, 0};
    Tape<double> tape;
    tape.backward(ops::cross_entropy(tape.param(L), tgt, mask));
    for (std::size_t r = 0; r < 6; ++r) {
      for (auto g : L.grad.row(r)) {
        if (!mask[r]) CHECK(g == 0.0);
      }
    }
    auto rep = check_gradients({&L}, [&](Tape<double>& t) { return ops::cross_entropy(t.param(L), tgt, mask); }, 30, 7);
    CHECK(rep.max_rel_error <= 1e-6);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum of squares at x=3 has gradient 6") {
    Parameter<double> x("x", Tensor<double>::scalar(3));
    Tape<double> tape;
    auto v = tape.param(x);
    tape.backward(ops::sum(ops::mul(v, v)));
    CHECK(x.grad.item() == 6.0);
    CHECK(tape.size() == 0);
  }

  TEST_CASE("constant loss leaves all gradients zero") {
    Parameter<double> x("x", Tensor<double>::from_rows({{1, 2}}));
    Tape<double> tape;
    tape.param(x);
    tape.backward(tape.constant(Tensor<double>::scalar(4)));
    for (auto g : x.grad.vec()) CHECK(g == 0.0);
  }

  TEST_CASE("tensor from another tape or a cleared tape is rejected") {
    Tape<double> a, b;
    auto va = ops::sum(a.constant(Tensor<double>::scalar(1)));
    CHECK_THROWS_AS(b.backward(va), std::logic_error);
    a.clear();
    CHECK_THROWS_AS(a.backward(va), std::logic_error);
  }

  TEST_CASE("gradient of a value off the loss path is zero") {
    Parameter<double> x("x", Tensor<double>::from_rows({{1, 2}}));
    Parameter<double> y("y", Tensor<double>::from_rows({{3, 4}}));
    Tape<double> tape;
    auto vx = tape.param(x);
    auto unused = ops::scale(tape.param(y), 2.0);
    tape.backward(ops::sum(vx), /*keep=*/true);
    const auto g_unused = tape.grad(unused);
    for (auto g : g_unused.vec()) CHECK(g == 0.0);
    for (auto g : y.grad.vec()) CHECK(g == 0.0);
  }

  TEST_CASE("random two-layer network matches finite differences") {
    std::mt19937_64 rng(8);
    Parameter<double> X("x", random_matrix(5, 6, rng));
    Parameter<double> W1("w1", random_matrix(6, 8, rng, -1, 1));
    Parameter<double> b1("b1", random_matrix(1, 8, rng));
    Parameter<double> W2("w2", random_matrix(8, 4, rng, -1, 1));
    Parameter<double> b2("b2", random_matrix(1, 4, rng));
    std::vector<int> tgt{0, 1, 2, 3, 1};
    std::vector<std::uint8_t> mask{1, 1, 1, 1, 1};
    auto fn = [&](Tape<double>& t) {
      auto h = ops::gelu(ops::add_row(ops::matmul(t.param(X), t.param(W1)), t.param(b1)));
      auto logits = ops::add_row(ops::matmul(h, t.param(W2)), t.param(b2));
      return ops::cross_entropy(logits, tgt, mask);
    };
    auto rep = check_gradients({&X, &W1, &b1, &W2, &b2}, fn, 20, 9);
    CHECK(rep.checked == 20);
    CHECK(rep.max_rel_error <= 1e-5);
  }
}

TEST_SUITE("primitives") {
  TEST_CASE("every primitive passes a finite-difference check") {
    std::mt19937_64 rng(10);
    Parameter<double> A("a", random_matrix(4, 6, rng));
    Parameter<double> B("b", random_matrix(4, 6, rng));
    Parameter<double> row("row", random_matrix(1, 6, rng));
    Parameter<double> gain("gain", random_matrix(1, 6, rng));
    Parameter<double> table("table", random_matrix(5, 6, rng));
    std::vector<int> ids{4, 0, 4, 2};

    struct Case {
      const char* name;
      std::vector<Parameter<double>*> params;
      emoshift::testing::LossFn fn;
    };
    std::vector<Case> cases{
        {"add", {&A, &B}, [&](Tape<double>& t) { return weighted_sum(ops::add(t.param(A), t.param(B)), 1); }},
        {"add_row", {&A, &row}, [&](Tape<double>& t) { return weighted_sum(ops::add_row(t.param(A), t.param(row)), 2); }},
        {"scale", {&A}, [&](Tape<double>& t) { return weighted_sum(ops::scale(t.param(A), -1.7), 3); }},
        {"mul", {&A, &B}, [&](Tape<double>& t) { return weighted_sum(ops::mul(t.param(A), t.param(B)), 4); }},
        {"layer_norm",
         {&A, &gain, &row},
         [&](Tape<double>& t) { return weighted_sum(ops::layer_norm(t.param(A), t.param(gain), t.param(row)), 5); }},
        {"gelu", {&A}, [&](Tape<double>& t) { return weighted_sum(ops::gelu(t.param(A)), 6); }},
        {"embedding", {&table}, [&](Tape<double>& t) { return weighted_sum(ops::embedding(t.param(table), ids), 7); }},
        {"concat_rows",
         {&A, &B},
         [&](Tape<double>& t) {
           std::vector<Var<double>> parts{t.param(A), t.param(B), t.param(A)};
           return weighted_sum(ops::concat_rows(std::span<const Var<double>>(parts)), 8);
         }},
        {"slice_rows", {&A}, [&](Tape<double>& t) { return weighted_sum(ops::slice_rows(t.param(A), 1, 3), 9); }},
        {"slice_cols", {&A}, [&](Tape<double>& t) { return weighted_sum(ops::slice_cols(t.param(A), 2, 5), 10); }},
    };
    for (const auto& c : cases) {
      CAPTURE(c.name);
      auto rep = check_gradients(c.params, c.fn, 24, 11);
      CHECK(rep.max_rel_error <= 1e-6);
    }
  }

  TEST_CASE("causal attention matches finite differences") {
    std::mt19937_64 rng(12);
    Parameter<double> qkv("qkv", random_matrix(7, 12, rng));
    std::vector<ops::Segment> segs{{0, 3}, {3, 4}};
    auto fn = [&](Tape<double>& t) {
      return weighted_sum(ops::causal_attention(t.param(qkv), std::span<const ops::Segment>(segs), 2), 13);
    };
    auto rep = check_gradients({&qkv}, fn, 60, 14);
    CHECK(rep.max_rel_error <= 1e-6);
  }

  TEST_CASE("causal attention ignores later positions and other segments") {
    std::mt19937_64 rng(15);
    Tensor<double> x = random_matrix(6, 12, rng);
    std::vector<ops::Segment> segs{{0, 6}};
    Tape<double> tape;
    auto base = ops::causal_attention(tape.constant(x), std::span<const ops::Segment>(segs), 2).value();
    x(4, 0) += 1.0;
    x(5, 7) -= 2.0;
    auto pert = ops::causal_attention(tape.constant(x), std::span<const ops::Segment>(segs), 2).value();
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(base(r, c) == pert(r, c));
    }
  }

  TEST_CASE("add_row rejects a non-row bias") {
    Tape<double> tape;
    CHECK_THROWS_AS(ops::add_row(tape.constant(Tensor<double>::matrix(2, 3)), tape.constant(Tensor<double>::matrix(2, 3))),
                    DimensionError);
  }

  TEST_CASE("embedding rejects out-of-range ids") {
    Tape<double> tape;
    std::vector<int> ids{5};
    CHECK_THROWS_AS(ops::embedding(tape.constant(Tensor<double>::matrix(5, 2)), ids), std::out_of_range);
  }

  TEST_CASE("identical inputs give bit-identical outputs") {
    std::mt19937_64 rng(16);
    const Tensor<float> x = tensor_cast<float>(random_matrix(5, 12, rng));
    std::vector<ops::Segment> segs{{0, 5}};
    auto run = [&] {
      Tape<float> t;
      auto a = ops::causal_attention(t.constant(x), std::span<const ops::Segment>(segs), 2);
      return ops::softmax_rows(ops::gelu(a)).value();
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("adamw") {
  TEST_CASE("zero gradient and zero weight decay leave params unchanged") {
    Parameter<double> p("p", Tensor<double>::from_rows({{1.5, -2.0, 0.25}}));
    const auto before = p.value;
    AdamW<double> opt({.learning_rate = 0.1, .weight_decay = 0.0}, {&p});
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(p.value == before);
  }

  TEST_CASE("first step moves against the gradient sign") {
    Parameter<double> p("p", Tensor<double>::from_rows({{1.0, 1.0}}));
    p.grad = Tensor<double>::from_rows({{0.3, -2.0}});
    AdamW<double> opt({.learning_rate = 0.01}, {&p});
    opt.step();
    CHECK(p.value[0] < 1.0);
    CHECK(p.value[1] > 1.0);
  }

  TEST_CASE("100 steps on (w-2)^2 from 0 with lr 0.1 converge") {
    Parameter<double> w("w", Tensor<double>::scalar(0.0));
    AdamW<double> opt({.learning_rate = 0.1}, {&w});
    for (int i = 0; i < 100; ++i) {
      w.zero_grad();
      Tape<double> tape;
      auto d = ops::add(tape.param(w), tape.constant(Tensor<double>::scalar(-2.0)));
      tape.backward(ops::sum(ops::mul(d, d)));
      opt.step();
    }
    CHECK(std::abs(w.value.item() - 2.0) < 0.05);
  }

  TEST_CASE("non-finite gradient names the parameter") {
    Parameter<double> p("layers.0.ff1.weight", Tensor<double>::scalar(1.0));
    p.grad[0] = std::nan("");
    AdamW<double> opt({}, {&p});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("layers.0.ff1.weight"), NonFiniteGradient);
  }

  TEST_CASE("frozen parameters are untouched") {
    Parameter<double> p("p", Tensor<double>::scalar(1.0));
    p.trainable = false;
    p.grad[0] = 5.0;
    AdamW<double> opt({.learning_rate = 0.5}, {&p});
    opt.step();
    CHECK(p.value.item() == 1.0);
  }

  TEST_CASE("gradient clipping bounds the global norm") {
    Parameter<double> a("a", Tensor<double>::from_rows({{0, 0}}));
    Parameter<double> b("b", Tensor<double>::scalar(0));
    a.grad = Tensor<double>::from_rows({{3, 4}});
    b.grad[0] = 12;
    const double pre = clip_grad_norm<double>({&a, &b}, 1.0);
    CHECK(pre == doctest::Approx(13.0));
    const double post = std::sqrt(a.grad[0] * a.grad[0] + a.grad[1] * a.grad[1] + b.grad[0] * b.grad[0]);
    CHECK(post <= 1.0 + 1e-6);
  }
}
