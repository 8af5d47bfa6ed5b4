#include <gtest/gtest.h>

#include <cmath>

#include "mfb/errors.hpp"
#include "mfb/gradcheck.hpp"
#include "mfb/layers.hpp"
#include "oracle.hpp"

using namespace mfb;

namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor random(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Linear, IdentityAndArithmetic) {
  LinearLayer id(2, 2);
  id.weight.value = Tensor::matrix({{1, 0}, {0, 1}});
  Graph g;
  EXPECT_EQ(linear_forward(id, g.input(Tensor::matrix({{3, 4}}))).value(),
            Tensor::matrix({{3, 4}}));
  LinearLayer sum(2, 1);
  sum.weight.value = Tensor::matrix({{1}, {1}});
  sum.bias->value = Tensor::vector({1});
  EXPECT_EQ(linear_forward(sum, g.input(Tensor::matrix({{2, 3}}))).value(), Tensor::matrix({{6}}));
  EXPECT_EQ(linear_forward(sum, g.input(Tensor::vector({2, 3}))).value(), Tensor::vector({6}));
  EXPECT_THROW(linear_forward(sum, g.input(Tensor::vector({2, 3, 4}))), ShapeError);
}

TEST(Linear, GradientOfSum) {
  Rng rng(1);
  LinearLayer layer(3, 4);
  layer.init(rng);
  layer.bias->value = random({4}, rng);
  Parameter x(random({2, 3}, rng));
  std::vector<Parameter*> params{&layer.weight, &*layer.bias, &x};
  auto r = check_gradients(params, [&](Graph& g) {
    return sum_all(linear_forward(layer, g.parameter(x)));
  });
  EXPECT_TRUE(r.passed()) << r.worst_rel_error;
}

TEST(Xavier, WithinBound) {
  Rng rng(2);
  Tensor t({30, 20});
  xavier_uniform(t, 30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  for (double v : t.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Lstm, ZeroWeightsFixedPoint) {
  LstmCell cell(3, 2);
  Graph g;
  auto s = lstm_step(cell, g.input(Tensor::vector({0.4, -2, 7})), g.input(Tensor({2})),
                     g.input(Tensor({2})));
  EXPECT_EQ(s.h.value(), Tensor({2}));
  EXPECT_EQ(s.c.value(), Tensor({2}));
}

TEST(Lstm, SaturatedGatesPreserveCell) {
  Rng rng(3);
  LstmCell cell(3, 4);
  cell.init(rng);
  const std::size_t h = 4;
  for (std::size_t i = 0; i < h; ++i) {
    cell.bias.value[i] = -40.0;     // input gate closed
    cell.bias.value[h + i] = 40.0;  // forget gate open
  }
  for (int trial = 0; trial < 20; ++trial) {
    Tensor c_prev = random({h}, rng);
    Graph g;
    auto s = lstm_step(cell, g.input(random({3}, rng, -0.5, 0.5)),
                       g.input(random({h}, rng, -0.5, 0.5)), g.input(c_prev));
    EXPECT_LE(max_abs_diff(s.c.value(), c_prev), 1e-6);
  }
}

TEST(Lstm, MatchesGateEquations) {
  Rng rng(4);
  LstmCell cell(2, 3);
  cell.init(rng);
  cell.bias.value = random({12}, rng);
  Tensor x = random({2}, rng), hp = random({3}, rng), cp = random({3}, rng);
  Graph g;
  auto s = lstm_step(cell, g.input(x), g.input(hp), g.input(cp));
  for (std::size_t j = 0; j < 3; ++j) {
    double z[4];
    for (int gate = 0; gate < 4; ++gate) {
      const std::size_t col = gate * 3 + j;
      z[gate] = cell.bias.value[col];
      for (std::size_t a = 0; a < 2; ++a) z[gate] += x[a] * cell.w_input.value.at(a, col);
      for (std::size_t a = 0; a < 3; ++a) z[gate] += hp[a] * cell.w_hidden.value.at(a, col);
    }
    const double c = sigmoid_ref(z[1]) * cp[j] + sigmoid_ref(z[0]) * std::tanh(z[2]);
    EXPECT_NEAR(s.c.value()[j], c, 1e-12);
    EXPECT_NEAR(s.h.value()[j], sigmoid_ref(z[3]) * std::tanh(c), 1e-12);
  }
}

TEST(Lstm, ThreeStepGradients) {
  Rng rng(5);
  LstmCell cell(3, 4);
  cell.init(rng);
  std::vector<Parameter> xs;
  for (int t = 0; t < 3; ++t) xs.emplace_back(random({3}, rng));
  std::vector<Parameter*> params{&cell.w_input, &cell.w_hidden, &cell.bias};
  auto r = check_gradients(params, [&](Graph& g) {
    LstmState s{g.constant(Tensor({4})), g.constant(Tensor({4}))};
    for (auto& x : xs) s = lstm_step(cell, g.constant(x.value), s.h, s.c);
    return sum_all(s.h);
  });
  EXPECT_TRUE(r.passed()) << r.worst_rel_error;
}

TEST(Lstm, ForgetBiasInitialisedToOne) {
  Rng rng(6);
  LstmCell cell(2, 3);
  cell.init(rng);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(cell.bias.value[i], (i >= 3 && i < 6) ? 1.0 : 0.0);
}

TEST(Dropout, ZeroRatioAndInferenceAreIdentity) {
  Rng rng(7);
  Graph g;
  Var x = g.input(random({50}, rng));
  EXPECT_EQ(dropout({0.0, Mode::training}, x, rng).value(), x.value());
  Var y = dropout({0.5, Mode::inference}, x, rng);
  EXPECT_EQ(y.id(), x.id());
  EXPECT_EQ(y.value(), x.value());
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Rng rng(8);
  Graph g;
  Var x = g.input(Tensor({100000}, 1.0));
  Var y = dropout({0.5, Mode::training}, x, rng);
  double total = 0.0;
  for (double v : y.value().data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    total += v;
  }
  const double mean = total / 100000.0;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
}

TEST(Dropout, RatioOutOfRange) {
  Rng rng(9);
  Graph g;
  Var x = g.input(Tensor({3}, 1.0));
  EXPECT_THROW(dropout({1.0, Mode::training}, x, rng), ConfigError);
  EXPECT_THROW(dropout({-0.1, Mode::training}, x, rng), ConfigError);
}

TEST(Softmax, Values) {
  Graph g;
  Var s = softmax(g.input(Tensor::vector({0, 0})), 0);
  EXPECT_EQ(s.value(), Tensor::vector({0.5, 0.5}));
  Var big = softmax(g.input(Tensor::vector({1000, 0})), 0);
  EXPECT_TRUE(big.value().all_finite());
  EXPECT_NEAR(big.value()[0], 1.0, 1e-15);
  EXPECT_NEAR(big.value()[1], 0.0, 1e-15);
}

TEST(Softmax, SlicesSumToOne) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.below(4), c = 1 + rng.below(6), axis = rng.below(2);
    Graph g;
    Var s = softmax(g.input(random({r, c}, rng, -30, 30)), axis);
    const auto& v = s.value();
    const std::size_t outer = axis == 0 ? c : r, inner = axis == 0 ? r : c;
    for (std::size_t a = 0; a < outer; ++a) {
      double total = 0.0;
      for (std::size_t b = 0; b < inner; ++b) {
        const double e = axis == 0 ? v.at(b, a) : v.at(a, b);
        EXPECT_GT(e, 0.0);
        total += e;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, Gradient) {
  Rng rng(11);
  Parameter x(random({6}, rng, -2, 2));
  const Tensor w = random({6}, rng);
  std::vector<Parameter*> params{&x};
  auto r = check_gradients(params, [&](Graph& g) {
    return sum_all(hadamard(softmax(g.parameter(x), 0), g.constant(w)));
  });
  EXPECT_TRUE(r.passed()) << r.worst_rel_error;
}

class EncodeQuestion : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(12);
    emb = EmbeddingLayer(8, 3);
    cell = LstmCell(3, 5);
    emb.init(rng);
    cell.init(rng);
  }
  EmbeddingLayer emb;
  LstmCell cell;
};

TEST_F(EncodeQuestion, Errors) {
  Graph g;
  EXPECT_THROW(
      {
        try {
          encode_question(emb, cell, g, std::vector<std::size_t>{}, 4);
        } catch (const ShapeError& e) {
          EXPECT_STREQ(e.what(), "empty token sequence");
          throw;
        }
      },
      ShapeError);
  EXPECT_THROW(encode_question(emb, cell, g, std::vector<std::size_t>{1, 2, 3}, 2), ShapeError);
}

TEST_F(EncodeQuestion, SingleToken) {
  Graph g;
  auto enc = encode_question(emb, cell, g, std::vector<std::size_t>{3}, 4);
  EXPECT_EQ(enc.all_states.shape(), (Shape{4, 5}));
  EXPECT_EQ(enc.last_state.value(), row(enc.all_states.value(), 0));
  EXPECT_EQ(enc.pad_mask, (std::vector<bool>{false, true, true, true}));
}

TEST_F(EncodeQuestion, LastStateIgnoresTrailingPadding) {
  const std::vector<std::size_t> tokens{1, 5, 2};
  Graph g;
  const Tensor ref = encode_question(emb, cell, g, tokens, 3).last_state.value();
  for (std::size_t T : {4, 7, 12}) {
    Graph g2;
    EXPECT_EQ(encode_question(emb, cell, g2, tokens, T).last_state.value(), ref) << T;
  }
}

TEST_F(EncodeQuestion, Deterministic) {
  const std::vector<std::size_t> tokens{4, 1, 6, 2};
  Graph a, b;
  EXPECT_EQ(encode_question(emb, cell, a, tokens, 6).all_states.value(),
            encode_question(emb, cell, b, tokens, 6).all_states.value());
}
