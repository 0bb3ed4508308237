#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gcls/autodiff.hpp"
#include "gcls/error.hpp"
#include "test_support.hh"

namespace gcls::ad {
namespace {

using testing::random_tensor;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no gcls::Error thrown";
  return ErrorCode::BadConfig;
}

TEST(Autodiff, Identity) {
  Tape t;
  auto x = t.leaf(Tensor::scalar(4.0));
  t.backward(x);
  EXPECT_EQ(t.grad(x).item(), 1.0);
}

TEST(Autodiff, Square) {
  Tape t;
  auto x = t.leaf(Tensor::scalar(3.0));
  t.backward(mul(x, x));
  EXPECT_EQ(t.grad(x).item(), 6.0);
}

TEST(Autodiff, ReluForwardBackward) {
  Tape t;
  auto x = t.leaf(Tensor(1, 2, {-1.0, 2.0}));
  auto y = relu(x);
  EXPECT_EQ(y.value().values, (std::vector<double>{0.0, 2.0}));
  t.backward(sum(y));
  EXPECT_EQ(t.grad(x).values, (std::vector<double>{0.0, 1.0}));
}

TEST(Autodiff, LayerNormConstantRow) {
  Tape t;
  auto x = t.constant(Tensor(2, 4, 3.5));
  auto g = t.constant(Tensor(1, 4, {1.0, 2.0, 3.0, 4.0}));
  auto b = t.constant(Tensor(1, 4, {0.1, 0.2, 0.3, 0.4}));
  auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y.value()(r, c), 0.1 * static_cast<double>(c + 1));
}

TEST(Autodiff, MatmulAgainstDenseOracle) {
  const Tensor a(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor b(3, 2, {7, 8, 9, 10, 11, 12});
  Tape t;
  auto va = t.leaf(a), vb = t.leaf(b);
  auto c = matmul(va, vb);
  EXPECT_EQ(c.value().values, (std::vector<double>{58, 64, 139, 154}));
  // L = sum(W .* C) with W = [[1,2],[3,4]]: dL/dA = W B^T, dL/dB = A^T W.
  auto w = t.constant(Tensor(2, 2, {1, 2, 3, 4}));
  t.backward(sum(mul(w, c)));
  EXPECT_EQ(t.grad(va).values, (std::vector<double>{23, 29, 35, 53, 67, 81}));
  EXPECT_EQ(t.grad(vb).values, (std::vector<double>{13, 18, 17, 24, 21, 30}));
}

TEST(Autodiff, BackwardConsumesTape) {
  Tape t;
  auto x = t.leaf(Tensor::scalar(1.0));
  auto y = scale(x, 2.0);
  t.backward(y);
  EXPECT_EQ(code_of([&] { t.backward(y); }), ErrorCode::DetachedLoss);
  Tape other;
  auto z = other.leaf(Tensor::scalar(1.0));
  Tape fresh;
  EXPECT_EQ(code_of([&] { fresh.backward(z); }), ErrorCode::DetachedLoss);
}

TEST(Autodiff, ShapeAndFiniteness) {
  Tape t;
  auto a = t.leaf(Tensor(2, 3));
  auto b = t.leaf(Tensor(2, 3));
  EXPECT_EQ(code_of([&] { matmul(a, b); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { add(a, t.leaf(Tensor(3, 2))); }), ErrorCode::ShapeMismatch);
  auto big = t.leaf(Tensor(1, 1, std::numeric_limits<double>::max()));
  EXPECT_EQ(code_of([&] { scale(big, 10.0); }), ErrorCode::NonFiniteValue);
  EXPECT_EQ(code_of([&] { l2_normalize_rows(t.leaf(Tensor(2, 3))); }), ErrorCode::ZeroRow);
}

TEST(Autodiff, DropoutEvalIsIdentityTrainIsInverted) {
  const Tensor x(50, 40, 1.0);
  Tape eval(false);
  EXPECT_EQ(dropout(eval.constant(x), 0.25).value(), x);
  Tape train(true, 7);
  const auto y = dropout(train.constant(x), 0.25).value();
  std::size_t zeros = 0;
  for (double v : y.values) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  EXPECT_NEAR(static_cast<double>(zeros) / static_cast<double>(y.size()), 0.25, 0.04);
}

TEST(Autodiff, BackwardIsLinearInSeed) {
  Rng rng(3);
  const auto x0 = random_tensor(rng, 4, 5), w0 = random_tensor(rng, 5, 3), seed = random_tensor(rng, 4, 3);
  auto run = [&](double s) {
    Tape t;
    auto x = t.leaf(x0), w = t.leaf(w0);
    auto y = relu(matmul(x, w));
    Tensor sd = seed;
    for (auto& v : sd.values) v *= s;
    t.backward(y, sd);
    return std::pair{t.grad(x), t.grad(w)};
  };
  const auto one = run(1.0), two = run(2.0);
  for (std::size_t i = 0; i < one.first.size(); ++i) EXPECT_EQ(two.first.values[i], 2.0 * one.first.values[i]);
  for (std::size_t i = 0; i < one.second.size(); ++i) EXPECT_EQ(two.second.values[i], 2.0 * one.second.values[i]);
}

TEST(GradCheck, QuadraticForm) {
  Rng rng(4);
  const auto a = random_tensor(rng, 6, 6);
  auto f = [&](Tape& t, Var x) { return sum(mul(x, transpose(matmul(t.constant(a), transpose(x))))); };
  const auto r = gradient_check(f, random_tensor(rng, 1, 6), 1e-5);
  EXPECT_EQ(r.checked, 6u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, ThreeLayerComposition) {
  Rng rng(5);
  std::vector<Tensor> inputs{random_tensor(rng, 5, 8), random_tensor(rng, 8, 6, 0.4), random_tensor(rng, 1, 6),
                             random_tensor(rng, 6, 4, 0.4), random_tensor(rng, 1, 4, 0.5) , random_tensor(rng, 1, 4, 0.5)};
  inputs[4].values = {1.1, 0.9, 1.3, 0.7};
  auto f = [](Tape&, std::span<const Var> v) {
    auto h = relu(add_row(matmul(v[0], v[1]), v[2]));
    h = layer_norm(matmul(h, v[3]), v[4], v[5]);
    return sum(mean_rows(mul(h, h)));
  };
  const auto r = gradient_check(f, inputs);
  EXPECT_GT(r.checked, 80u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

// One representative composition per primitive.
TEST(GradCheck, EveryPrimitive) {
  Rng rng(6);
  using Fn = std::function<Var(Tape&, std::span<const Var>)>;
  struct Case {
    const char* name;
    std::vector<Tensor> inputs;
    Fn f;
  };
  const auto w = random_tensor(rng, 2, 4);
  std::vector<std::pair<std::size_t, std::size_t>> ranges{{0, 2}, {2, 5}};
  kernels::RelationCsr rel = kernels::RelationCsr::from_edges(
      5, std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}, {2, 1}, {3, 4}, {4, 4}, {1, 0}});
  std::vector<Case> cases{
      {"matmul_nt", {random_tensor(rng, 3, 4), random_tensor(rng, 5, 4)},
       [](Tape&, std::span<const Var> v) { return sum(matmul_nt(v[0], v[1])); }},
      {"add_scale", {random_tensor(rng, 3, 4), random_tensor(rng, 3, 4)},
       [](Tape&, std::span<const Var> v) { auto s = add(v[0], scale(v[1], -1.5)); return sum(mul(s, s)); }},
      {"transpose", {random_tensor(rng, 3, 4)},
       [w](Tape& t, std::span<const Var> v) { return sum(matmul(t.constant(w), transpose(v[0]))); }},
      {"layer_norm", {random_tensor(rng, 3, 6), random_tensor(rng, 1, 6), random_tensor(rng, 1, 6)},
       [](Tape&, std::span<const Var> v) { auto y = layer_norm(v[0], v[1], v[2]); return sum(mul(y, y)); }},
      {"relation_mean", {random_tensor(rng, 5, 3)},
       [rel](Tape&, std::span<const Var> v) { auto y = relation_mean(v[0], rel); return sum(mul(y, y)); }},
      {"segment_mean", {random_tensor(rng, 5, 3)},
       [ranges](Tape&, std::span<const Var> v) { auto y = segment_mean(v[0], ranges); return sum(mul(y, y)); }},
      {"stack_rows", {random_tensor(rng, 1, 3), random_tensor(rng, 1, 3)},
       [](Tape&, std::span<const Var> v) { auto y = stack_rows(v); return sum(mul(y, transpose(transpose(y)))); }},
      {"l2_normalize", {random_tensor(rng, 4, 5)},
       [](Tape& t, std::span<const Var> v) { return sum(matmul(l2_normalize_rows(v[0]), t.constant(Tensor(5, 1, {1, 2, 3, 4, 5})))); }},
      {"diag_cross_entropy", {random_tensor(rng, 4, 4)},
       [](Tape&, std::span<const Var> v) { return diag_cross_entropy(v[0]); }},
      {"basis_combine", {random_tensor(rng, 4, 2), random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)},
       [](Tape&, std::span<const Var> v) {
         std::vector<Var> bases{v[1], v[2]};
         auto y = basis_combine(v[0], 2, bases);
         return sum(mul(y, y));
       }},
      {"relation_combine", {random_tensor(rng, 3, 2), random_tensor(rng, 2, 3), random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)},
       [](Tape&, std::span<const Var> v) {
         std::vector<Var> terms{v[1], v[2], v[3]};
         auto y = relation_combine(v[0], 1, terms);
         return sum(mul(y, y));
       }},
  };
  for (const auto& c : cases) {
    const auto r = gradient_check(c.f, c.inputs);
    EXPECT_GT(r.checked, 0u) << c.name;
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " worst " << r.worst;
  }
}

TEST(GradCheck, DropoutWithFixedMask) {
  Rng rng(7);
  GradCheckOptions opt;
  opt.train = true;
  opt.dropout_seed = 11;
  auto f = [](Tape&, std::span<const Var> v) { auto y = dropout(v[0], 0.3); return sum(mul(y, y)); };
  const auto r = gradient_check(f, {random_tensor(rng, 4, 6)}, opt);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, CorruptedBackwardIsCaught) {
  // y = x^2 with a backward that returns 3x instead of 2x.
  auto broken_square = [](Var x) {
    auto value = x.value();
    for (auto& v : value.values) v *= v;
    return x.tape->push(std::move(value), {x.id}, [xi = x.id](Tape& t, std::uint32_t self) {
      const auto& g = t.grad_mut(self);
      const auto& xv = t.value_of(xi);
      Tensor gx(xv.rows, xv.cols);
      for (std::size_t i = 0; i < gx.size(); ++i) gx.values[i] = g.values[i] * 3.0 * xv.values[i];
      auto& dst = t.grad_mut(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) dst.values[i] += gx.values[i];
    });
  };
  Rng rng(8);
  const auto r = gradient_check([&](Tape&, Var x) { return sum(broken_square(x)); }, random_tensor(rng, 2, 3), 1e-5);
  EXPECT_GT(r.max_rel_error, 1e-2);
}

TEST(GradCheck, KinkCoordinatesExcluded) {
  // One entry sits right at the ReLU kink.
  Tensor x(1, 3, {0.5, 1e-7, -0.3});
  const auto r = gradient_check([](Tape&, Var v) { return sum(relu(v)); }, x, 1e-5);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

}  // namespace
}  // namespace gcls::ad
