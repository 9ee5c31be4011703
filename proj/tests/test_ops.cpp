#include <catch2/catch_amalgamated.hpp>

#include "quesnet/gradcheck.hpp"
#include "quesnet/ops.hpp"

using namespace quesnet;

TEST_CASE("conv2d frozen 3x3 example") {
  Tensor x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k = Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, k, b, 1, 0);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(y.data() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d halving geometry") {
  Tensor x = Tensor::zeros({3, 16, 16});
  Tensor k = Tensor::zeros({8, 3, 4, 4});
  Tensor b = Tensor::zeros({8});
  Tensor y = conv2d(x, k, b, 2, 1);
  CHECK(y.shape() == Shape{8, 8, 8});
  CHECK_THROWS_AS(conv2d(Tensor::zeros({3, 15, 15}), k, b, 2, 1),
                  DimensionError);
}

TEST_CASE("transposed_conv2d inverts conv2d geometry") {
  Tensor x = Tensor::zeros({8, 8, 8});
  Tensor k = Tensor::zeros({8, 3, 4, 4});
  Tensor b = Tensor::zeros({3});
  Tensor y = transposed_conv2d(x, k, b, 2, 1);
  CHECK(y.shape() == Shape{3, 16, 16});
}

TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv_transposed(y)> for the same kernel array.
  Rng rng(21);
  std::vector<double> xv(2 * 6 * 6), kv(3 * 2 * 4 * 4), yv;
  for (auto& v : xv) v = rng.normal();
  for (auto& v : kv) v = rng.normal();
  Tensor x = Tensor::from({2, 6, 6}, xv);
  Tensor k_conv = Tensor::from({3, 2, 4, 4}, kv);
  Tensor zb3 = Tensor::zeros({3}), zb2 = Tensor::zeros({2});
  Tensor cy = conv2d(x, k_conv, zb3, 2, 1);  // [3 x 3 x 3]
  yv.resize(cy.size());
  for (auto& v : yv) v = rng.normal();
  Tensor y = Tensor::from(cy.shape(), yv);

  double lhs = 0.0;
  for (std::size_t i = 0; i < cy.size(); ++i)
    lhs += cy.data()[i] * y.data()[i];

  Tensor k_tc = Tensor::from({3, 2, 4, 4}, kv);
  Tensor back = transposed_conv2d(y, k_tc, zb2, 2, 1);  // [2 x 6 x 6]
  REQUIRE(back.shape() == x.shape());
  double rhs = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i)
    rhs += back.data()[i] * x.data()[i];
  CHECK(lhs == Catch::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("numeric gradients: conv2d") {
  Rng rng(22);
  ParamMap ps;
  Tensor x = ps.add("x", Tensor::zeros({2, 4, 4}, true));
  Tensor k = ps.add("k", Tensor::zeros({3, 2, 2, 2}, true));
  Tensor b = ps.add("b", Tensor::zeros({3}, true));
  for (auto& v : x.data()) v = rng.normal();
  for (auto& v : k.data()) v = rng.normal() * 0.5;
  for (auto& v : b.data()) v = rng.normal() * 0.1;
  auto loss = [&]() {
    Tensor y = conv2d(ps.at("x"), ps.at("k"), ps.at("b"), 2, 1);
    return mean(mul(y, y));
  };
  auto res = grad_check(loss, ps);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("numeric gradients: transposed_conv2d") {
  Rng rng(23);
  ParamMap ps;
  Tensor x = ps.add("x", Tensor::zeros({3, 3, 3}, true));
  Tensor k = ps.add("k", Tensor::zeros({3, 2, 2, 2}, true));
  Tensor b = ps.add("b", Tensor::zeros({2}, true));
  for (auto& v : x.data()) v = rng.normal();
  for (auto& v : k.data()) v = rng.normal() * 0.5;
  for (auto& v : b.data()) v = rng.normal() * 0.1;
  auto loss = [&]() {
    Tensor y = transposed_conv2d(ps.at("x"), ps.at("k"), ps.at("b"), 2, 1);
    return mean(mul(y, y));
  };
  auto res = grad_check(loss, ps);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("lstm_cell matches direct formula") {
  Tensor x = Tensor::from({1}, {1.0});
  Tensor h0 = Tensor::from({1}, {2.0});
  Tensor c0 = Tensor::from({1}, {0.5});
  Tensor w = Tensor::from({4, 2}, {1, 0, 0, 1, 1, 1, 0.5, -0.5});
  Tensor b = Tensor::zeros({4});
  auto out = lstm_cell(x, h0, c0, w, b);

  auto sg = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double i = sg(1.0), f = sg(2.0), g = std::tanh(3.0), o = sg(-0.5);
  double c = f * 0.5 + i * g;
  double h = o * std::tanh(c);
  CHECK(out.c.item() == Catch::Approx(c).epsilon(1e-12));
  CHECK(out.h.item() == Catch::Approx(h).epsilon(1e-12));
}

TEST_CASE("lstm_cell with zero weights halves the cell state") {
  Tensor x = Tensor::from({2}, {3.0, -1.0});
  Tensor h0 = Tensor::zeros({1});
  Tensor c0 = Tensor::from({1}, {0.8});
  Tensor w = Tensor::zeros({4, 3});
  Tensor b = Tensor::zeros({4});
  auto out = lstm_cell(x, h0, c0, w, b);
  CHECK(out.c.item() == Catch::Approx(0.4));
  CHECK(out.h.item() == Catch::Approx(0.5 * std::tanh(0.4)));
}

TEST_CASE("numeric gradients: lstm_cell chain") {
  Rng rng(24);
  const std::size_t nx = 3, u = 2;
  ParamMap ps;
  Tensor w = ps.add("w", Tensor::zeros({4 * u, nx + u}, true));
  Tensor b = ps.add("b", Tensor::zeros({4 * u}, true));
  Tensor x1 = ps.add("x1", Tensor::zeros({nx}, true));
  Tensor x2 = ps.add("x2", Tensor::zeros({nx}, true));
  for (auto& v : w.data()) v = rng.normal() * 0.4;
  for (auto& v : b.data()) v = rng.normal() * 0.1;
  for (auto& v : x1.data()) v = rng.normal();
  for (auto& v : x2.data()) v = rng.normal();
  auto loss = [&]() {
    Tensor h = Tensor::zeros({u});
    Tensor c = Tensor::zeros({u});
    auto s1 = lstm_cell(ps.at("x1"), h, c, ps.at("w"), ps.at("b"));
    auto s2 = lstm_cell(ps.at("x2"), s1.h, s1.c, ps.at("w"), ps.at("b"));
    return sum(mul(s2.h, s2.h));
  };
  auto res = grad_check(loss, ps);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("lstm_cell gradient flows even when h is unused") {
  // Loss through c only; checks the fused node propagates both halves.
  Rng rng(25);
  ParamMap ps;
  Tensor w = ps.add("w", Tensor::zeros({4, 2}, true));
  Tensor b = ps.add("b", Tensor::zeros({4}, true));
  for (auto& v : w.data()) v = rng.normal() * 0.5;
  for (auto& v : b.data()) v = rng.normal() * 0.2;
  Tensor x = Tensor::from({1}, {0.7});
  auto loss = [&]() {
    auto s = lstm_cell(x, Tensor::zeros({1}), Tensor::from({1}, {0.3}),
                       ps.at("w"), ps.at("b"));
    return sum(mul(s.c, s.c));
  };
  auto res = grad_check(loss, ps);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("layer_norm_rows normalizes rows") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, -5, 0, 5});
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  Tensor y = layer_norm_rows(x, gamma, beta);
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 3; ++j) m += y.data()[r * 3 + j];
    m /= 3.0;
    for (std::size_t j = 0; j < 3; ++j) {
      double d = y.data()[r * 3 + j] - m;
      v += d * d;
    }
    v /= 3.0;
    CHECK(m == Catch::Approx(0.0).margin(1e-9));
    CHECK(v == Catch::Approx(1.0).epsilon(1e-4));
  }
  // Row [1,2,3] normalizes to +-sqrt(3/2) at the ends.
  CHECK(y.data()[0] == Catch::Approx(-std::sqrt(1.5)).epsilon(1e-4));
  CHECK(y.data()[2] == Catch::Approx(std::sqrt(1.5)).epsilon(1e-4));
}

TEST_CASE("numeric gradients: layer_norm_rows") {
  Rng rng(26);
  ParamMap ps;
  Tensor x = ps.add("x", Tensor::zeros({3, 4}, true));
  Tensor g = ps.add("g", Tensor::zeros({4}, true));
  Tensor be = ps.add("be", Tensor::zeros({4}, true));
  for (auto& v : x.data()) v = rng.normal();
  for (auto& v : g.data()) v = 1.0 + 0.3 * rng.normal();
  for (auto& v : be.data()) v = 0.2 * rng.normal();
  auto loss = [&]() {
    Tensor y = layer_norm_rows(ps.at("x"), ps.at("g"), ps.at("be"));
    return mean(mul(y, y));
  };
  auto res = grad_check(loss, ps);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("dropout keeps expectation and is deterministic per seed") {
  Tensor x = Tensor::full({10000}, 1.0, true);
  Rng rng(27);
  Tensor y = dropout(x, 0.5, rng, true);
  std::size_t kept = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == 2.0));
    if (v != 0.0) ++kept;
  }
  double frac = static_cast<double>(kept) / 10000.0;
  CHECK(frac > 0.45);
  CHECK(frac < 0.55);

  Rng rng2(27);
  Tensor y2 = dropout(x, 0.5, rng2, true);
  CHECK(y.data() == y2.data());

  Rng rng3(27);
  Tensor same = dropout(x, 0.5, rng3, false);
  CHECK(same.data() == x.data());
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), UsageError);
}

TEST_CASE("dropout backward routes through the mask") {
  Tensor x = Tensor::full({100}, 3.0, true);
  Rng rng(28);
  Tensor y = dropout(x, 0.3, rng, true);
  sum(y).backward();
  for (std::size_t i = 0; i < 100; ++i) {
    if (y.data()[i] == 0.0)
      CHECK(x.grad()[i] == 0.0);
    else
      CHECK(x.grad()[i] == Catch::Approx(1.0 / 0.7));
  }
}

TEST_CASE("max_over_rows honors the mask") {
  Tensor x = Tensor::from({3, 2}, {5, 0, 1, 9, 2, 3}, true);
  std::vector<int> mask = {0, 1, 1};
  Tensor y = max_over_rows(x, mask);
  CHECK(y.data() == std::vector<double>{2, 9});
  sum(y).backward();
  CHECK(x.grad() ==
        std::vector<double>{0, 0, 0, 1, 1, 0});
  CHECK_THROWS_AS(max_over_rows(x, std::vector<int>{0, 0, 0}), UsageError);
  CHECK_THROWS_AS(max_over_rows(x, std::vector<int>{1, 1}), DimensionError);
}

TEST_CASE("global_max_pool picks the channel maxima") {
  Tensor x = Tensor::from({2, 2, 2}, {1, 7, 3, 2, -5, -1, -9, -2}, true);
  Tensor y = global_max_pool(x);
  CHECK(y.data() == std::vector<double>{7, -1});
  sum(y).backward();
  CHECK(x.grad() == std::vector<double>{0, 1, 0, 0, 0, 1, 0, 0});
}

TEST_CASE("embedding_row selects and scatters") {
  Tensor table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor r = embedding_row(table, 1);
  CHECK(r.data() == std::vector<double>{3, 4});
  sum(mul(r, r)).backward();
  CHECK(table.grad() == std::vector<double>{0, 0, 6, 8, 0, 0});
  CHECK_THROWS_AS(embedding_row(table, 3), IndexError);
}

TEST_CASE("numeric gradients: slice_cols and slice_row") {
  Rng rng(29);
  ParamMap ps;
  Tensor x = ps.add("x", Tensor::zeros({3, 6}, true));
  for (auto& v : x.data()) v = rng.normal();
  auto loss = [&]() {
    Tensor left = slice_cols(ps.at("x"), 0, 2);
    Tensor right = slice_cols(ps.at("x"), 2, 4);
    Tensor row = slice_row(right, 1);
    return add(mean(mul(left, left)), sum(mul(row, row)));
  };
  auto res = grad_check(loss, ps);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("xavier_fill respects the fan bound") {
  Rng rng(30);
  Tensor t = Tensor::zeros({50, 20}, true);
  xavier_fill(t, 20, 50, rng);
  double bound = std::sqrt(6.0 / 70.0);
  double mx = 0.0;
  for (double v : t.data()) mx = std::max(mx, std::abs(v));
  CHECK(mx <= bound);
  CHECK(mx > bound * 0.9);  // fills the range
}
