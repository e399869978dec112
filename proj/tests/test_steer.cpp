#include <doctest.h>

#include <cmath>
#include <random>

#include "emoshift/model.hpp"
#include "emoshift/ops.hpp"
#include "emoshift/steer.hpp"
#include "support/finite_diff.hpp"

using namespace emoshift;
using emoshift::testing::check_gradients;
using emoshift::testing::random_matrix;

namespace {

SteerBank<double> bank_with(std::size_t d, std::size_t e_count, double eps) {
  ModelConfig c;
  c.d_model = d;
  c.n_heads = 1;
  c.n_emotions = e_count;
  return init_steer<double>(c, eps, SteerInit::kZeros);
}

}  // namespace

TEST_CASE("zero bank is the identity for any gain") {
  std::mt19937_64 rng(3);
  auto bank = bank_with(8, 5, 0.001);
  const auto h0 = random_matrix(6, 8, rng);
  for (double alpha : {0.0, 1.0, 3.0, 32.0}) {
    Tape<double> tape;
    auto out = steer(tape.constant(h0), 2, alpha, bank);
    CHECK(out.value() == h0);
  }
}

TEST_CASE("hand example h=[1,2], W=0.5I, eps=0.001, alpha=3") {
  auto bank = bank_with(2, 2, 0.001);
  bank.projections[1].value = Tensor<double>::from_rows({{0.5, 0}, {0, 0.5}});
  Tape<double> tape;
  auto out = steer(tape.constant(Tensor<double>::from_rows({{1, 2}})), 1, 3.0, bank);
  CHECK(out.value()[0] == doctest::Approx(1.0015).epsilon(1e-12));
  CHECK(out.value()[1] == doctest::Approx(2.003).epsilon(1e-12));
}

TEST_CASE("gain zero returns h exactly even with a non-zero bank") {
  std::mt19937_64 rng(4);
  auto bank = bank_with(8, 3, 0.001);
  for (auto& p : bank.projections) p.value = random_matrix(8, 8, rng);
  const auto h0 = random_matrix(5, 8, rng);
  Tape<double> tape;
  CHECK(steer(tape.constant(h0), 1, 0.0, bank).value() == h0);
}

TEST_CASE("steer(h,e,2) - steer(h,e,1) equals eps * h W_e by direct matmul") {
  std::mt19937_64 rng(5);
  const std::size_t d = 8;
  auto bank = bank_with(d, 3, 0.001);
  for (auto& p : bank.projections) p.value = random_matrix(d, d, rng);
  const auto h0 = random_matrix(4, d, rng);
  Tape<double> tape;
  auto a2 = steer(tape.constant(h0), 2, 2.0, bank).value();
  auto a1 = steer(tape.constant(h0), 2, 1.0, bank).value();
  const auto& W = bank.projections[2].value;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double hw = 0;
      for (std::size_t k = 0; k < d; ++k) hw += h0(i, k) * W(k, j);
      CHECK(a2(i, j) - a1(i, j) == doctest::Approx(0.001 * hw).epsilon(1e-9));
    }
  }
}

TEST_CASE("gain is affine: steer(h,e,a) = h + a (steer(h,e,1) - h)") {
  std::mt19937_64 rng(6);
  const std::size_t d = 8;
  auto bank = bank_with(d, 2, 0.001);
  for (auto& p : bank.projections) p.value = random_matrix(d, d, rng);
  const auto h0 = random_matrix(3, d, rng);
  Tape<double> tape;
  const auto one = steer(tape.constant(h0), 0, 1.0, bank).value();
  for (double a : {0.5, 1.5, 3.0, 4.0, 32.0}) {
    const auto got = steer(tape.constant(h0), 0, a, bank).value();
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i] - (h0[i] + a * (one[i] - h0[i]))) <= 1e-6);
    }
  }
}

TEST_CASE("errors: unknown emotion, negative gain, non-positive epsilon or sigma") {
  auto bank = bank_with(4, 5, 0.001);
  Tape<double> tape;
  auto h = tape.constant(Tensor<double>::matrix(1, 4));
  CHECK_THROWS_AS(steer(h, 5, 1.0, bank), std::out_of_range);
  CHECK_THROWS_AS(steer(h, -1, 1.0, bank), std::out_of_range);
  CHECK_THROWS_AS(steer(h, 0, -0.5, bank), std::invalid_argument);
  ModelConfig c;
  CHECK_THROWS_AS(init_steer<double>(c, 0.0, SteerInit::kZeros), std::invalid_argument);
  CHECK_THROWS_AS(init_steer<double>(c, 0.001, SteerInit::kGaussian, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(init_steer<double>(c, 0.001, SteerInit::kGaussian, -1.0), std::invalid_argument);
}

TEST_CASE("parameter count is E d^2") {
  ModelConfig c;
  CHECK(steer_param_count(init_steer<float>(c, 0.001, SteerInit::kZeros)) == 20480);
  ModelConfig tiny;
  tiny.d_model = 1;
  tiny.n_heads = 1;
  CHECK(steer_param_count(init_steer<float>(tiny, 0.001, SteerInit::kZeros)) == 5);
}

TEST_CASE("gaussian init is seeded and has the requested spread") {
  ModelConfig c;
  auto a = init_steer<double>(c, 0.001, SteerInit::kGaussian, 0.02, 11);
  auto b = init_steer<double>(c, 0.001, SteerInit::kGaussian, 0.02, 11);
  auto other = init_steer<double>(c, 0.001, SteerInit::kGaussian, 0.02, 12);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t e = 0; e < a.n_emotions(); ++e) {
    CHECK(a.projections[e].value == b.projections[e].value);
    CHECK_FALSE(a.projections[e].value == other.projections[e].value);
    for (double v : a.projections[e].value.vec()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  CHECK(std::abs(sd - 0.02) <= 0.002);
}

TEST_CASE("steer_rows leaves rows outside the listed ranges untouched") {
  std::mt19937_64 rng(7);
  auto bank = bank_with(6, 3, 0.01);
  for (auto& p : bank.projections) p.value = random_matrix(6, 6, rng);
  const auto h0 = random_matrix(10, 6, rng);
  const std::vector<SteerRows> rows{{2, 4, 0}, {7, 9, 2}};
  Tape<double> tape;
  const auto out = steer_rows(tape.constant(h0), rows, 2.0, bank).value();
  for (std::size_t i = 0; i < 10; ++i) {
    const bool inside = (i >= 2 && i < 4) || (i >= 7 && i < 9);
    bool same = true;
    for (std::size_t j = 0; j < 6; ++j) same = same && out(i, j) == h0(i, j);
    CHECK(same == !inside);
  }
}

TEST_CASE("gradients through steer match central differences for h and W_e") {
  std::mt19937_64 rng(8);
  const std::size_t d = 6;
  auto bank = bank_with(d, 3, 0.05);
  for (auto& p : bank.projections) p.value = random_matrix(d, d, rng);
  Parameter<double> h("h", random_matrix(5, d, rng));
  const auto w = random_matrix(5, d, rng);
  const std::vector<SteerRows> rows{{0, 2, 1}, {2, 5, 2}};
  auto loss = [&](Tape<double>& tape) {
    auto y = steer_rows(tape.param(h), rows, 2.5, bank);
    return ops::sum(ops::mul(ops::mul(y, y), tape.constant(w)));
  };
  std::vector<Parameter<double>*> params{&h, &bank.projections[1], &bank.projections[2]};
  const auto rep = check_gradients(params, loss, 30, 9);
  CHECK(rep.checked == 30);
  CHECK(rep.max_rel_error <= 1e-6);
}

TEST_CASE("tape-free steer_row matches steer_rows bit for bit") {
  std::mt19937_64 rng(10);
  const std::size_t d = 16;
  ModelConfig c;
  c.d_model = d;
  c.n_heads = 2;
  auto bank = init_steer<float>(c, 0.001, SteerInit::kGaussian, 0.5, 3);
  const auto h0 = tensor_cast<float>(random_matrix(4, d, rng));
  Tape<float> tape;
  const auto full = steer(tape.constant(h0), 3, 2.5f, bank).value();
  std::vector<float> scratch(d), out(d);
  for (std::size_t i = 0; i < 4; ++i) {
    steer_row(&h0(i, 0), bank.projections[3].value, steer_coefficient(bank, 2.5f), scratch.data(), out.data());
    for (std::size_t j = 0; j < d; ++j) CHECK(out[j] == full(i, j));
  }
}
