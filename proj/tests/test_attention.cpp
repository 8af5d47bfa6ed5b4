#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mfb/attention.hpp"
#include "mfb/errors.hpp"
#include "mfb/gradcheck.hpp"

using namespace mfb;

namespace {

Tensor random(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

struct Fixture {
  explicit Fixture(std::uint64_t seed, std::size_t d = 4, std::size_t dq = 3)
      : rng(seed), q_head(d, 5, 2), fuse({d, dq, 2, 3, 0.0}), i_head(3, 4, 2) {
    q_head.init(rng);
    fuse.init(rng);
    i_head.init(rng);
    q_head.hidden.bias->value = random({5}, rng);
    i_head.hidden.bias->value = random({4}, rng);
  }
  Rng rng;
  AttentionHead q_head;
  MfbBlock fuse;
  AttentionHead i_head;
};

void expect_rows_are_distributions(const Tensor& w) {
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < w.dim(1); ++c) {
      EXPECT_GE(w.at(r, c), 0.0);
      total += w.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

}  // namespace

TEST(QuestionAttention, SingleRealToken) {
  Fixture f(1);
  Tensor states = random({3, 4}, f.rng);
  Graph g;
  auto out = question_self_attention(f.q_head, g.input(states), {false, true, true});
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(out.weights.value().at(j, 0), 1.0);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.attended.value()[j * 4 + c], states.at(0, c));
  }
}

TEST(QuestionAttention, IdenticalStatesGiveUniformWeights) {
  Fixture f(2);
  Tensor one = random({4}, f.rng);
  std::vector<Tensor> rows(5, one);
  Graph g;
  auto out = question_self_attention(f.q_head, g.input(stack_rows(rows)),
                                     {false, false, false, true, true});
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(out.weights.value().at(j, t), 1.0 / 3, 1e-15);
    for (std::size_t t = 3; t < 5; ++t) EXPECT_EQ(out.weights.value().at(j, t), 0.0);
  }
}

TEST(QuestionAttention, AttendedIsWeightedSum) {
  Fixture f(3);
  Tensor states = random({6, 4}, f.rng);
  Graph g;
  auto out = question_self_attention(f.q_head, g.input(states), std::vector<bool>(6, false));
  ASSERT_EQ(out.attended.size(), 2u * 4u);
  const Tensor& w = out.weights.value();
  expect_rows_are_distributions(w);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < 6; ++t) s += w.at(j, t) * states.at(t, c);
      EXPECT_NEAR(out.attended.value()[j * 4 + c], s, 1e-12);
    }
}

TEST(QuestionAttention, MaskErrors) {
  Fixture f(4);
  Graph g;
  Var states = g.input(random({2, 4}, f.rng));
  EXPECT_THROW(question_self_attention(f.q_head, states, {true, true}), ShapeError);
  EXPECT_THROW(question_self_attention(f.q_head, states, {false}), ShapeError);
}

TEST(ImageAttention, SingleGrid) {
  Fixture f(5);
  Tensor grid = random({1, 4}, f.rng);
  Graph g;
  auto out = image_attention(f.i_head, f.fuse, g.input(grid), g.input(random({3}, f.rng)), f.rng);
  EXPECT_EQ(out.weights.value(), Tensor({2, 1}, 1.0));
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.attended.value()[j * 4 + c], grid.at(0, c));
}

TEST(ImageAttention, IdenticalGridsGiveUniformWeights) {
  Fixture f(6);
  std::vector<Tensor> rows(4, random({4}, f.rng));
  Graph g;
  auto out = image_attention(f.i_head, f.fuse, g.input(stack_rows(rows)),
                             g.input(random({3}, f.rng)), f.rng);
  for (double w : out.weights.value().data()) EXPECT_NEAR(w, 0.25, 1e-15);
}

TEST(ImageAttention, PermutationEquivariant) {
  Fixture f(7);
  Tensor grids = random({5, 4}, f.rng);
  Tensor q = random({3}, f.rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<Tensor> permuted;
  for (auto p : perm) permuted.push_back(row(grids, p));
  Graph g;
  auto a = image_attention(f.i_head, f.fuse, g.input(grids), g.input(q), f.rng);
  auto b = image_attention(f.i_head, f.fuse, g.input(stack_rows(permuted)), g.input(q), f.rng);
  expect_rows_are_distributions(a.weights.value());
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 5; ++i)
      EXPECT_NEAR(b.weights.value().at(j, i), a.weights.value().at(j, perm[i]), 1e-15);
  EXPECT_LE(max_abs_diff(a.attended.value(), b.attended.value()), 1e-12);
}

TEST(ImageAttention, Gradients) {
  Fixture f(8);
  Tensor grids = random({4, 4}, f.rng), q = random({3}, f.rng);
  // Keep every pooled value away from the power-norm kink at 0.
  for (;;) {
    Graph g;
    Rng unused(0);
    Var pooled = sum_pool(mfb_expand(f.fuse, g.constant(grids), g.constant(q), unused), 2);
    double smallest = 1e300;
    for (double v : pooled.value().data()) smallest = std::min(smallest, std::abs(v));
    if (smallest > 0.05) break;
    q = random({3}, f.rng);
  }
  const Tensor w = random({8}, f.rng);
  std::vector<Parameter*> ps;
  for (auto* l : {&f.fuse.proj_x, &f.fuse.proj_y, &f.i_head.hidden, &f.i_head.logits}) {
    ps.push_back(&l->weight);
    ps.push_back(&*l->bias);
  }
  auto r = check_gradients(ps, [&](Graph& g) {
    Rng unused(0);
    auto out = image_attention(f.i_head, f.fuse, g.constant(grids), g.constant(q), unused);
    return sum_all(hadamard(out.attended, g.constant(w)));
  });
  EXPECT_TRUE(r.passed()) << r.worst_rel_error << " at " << r.worst_location;
}

TEST(QuestionAttention, Gradients) {
  Fixture f(9);
  Parameter states(random({5, 4}, f.rng));
  const Tensor w = random({8}, f.rng);
  std::vector<Parameter*> ps{&f.q_head.hidden.weight, &*f.q_head.hidden.bias,
                             &f.q_head.logits.weight, &*f.q_head.logits.bias, &states};
  auto r = check_gradients(ps, [&](Graph& g) {
    auto out = question_self_attention(f.q_head, g.parameter(states),
                                       {false, false, false, false, true});
    return sum_all(hadamard(out.attended, g.constant(w)));
  });
  EXPECT_TRUE(r.passed()) << r.worst_rel_error;
}
