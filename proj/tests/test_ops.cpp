#include <gtest/gtest.h>

#include <random>

#include "dasgil/ops.hpp"
#include "gradcheck.hpp"

using namespace dasgil;
using dasgil::testing::gradient_error;
using dasgil::testing::random_tensor;

namespace {

// Contract a tensor op to a scalar with fixed random weights so every output element matters.
Var<double> probe(const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = Var<double>::constant(random_tensor(y.shape(), rng));
  Tensor<double> prod(y.shape(), y.value().data.cwiseProduct(w.value().data));
  return make_op<double>(Tensor<double>::scalar(prod.data.sum()), {y}, [w](Node<double>& self) {
    self.parent(0).grad_buffer() += self.grad[0] * w.value().data;
  });
}

}  // namespace

TEST(Conv2d, MatchesDirectSum) {
  std::mt19937_64 rng(1);
  auto x = random_tensor(Shape{2, 3, 5, 6}, rng);
  auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
  auto b = random_tensor(Shape{1, 4, 1, 1}, rng);
  auto y = ops::conv2d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b), 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3, 3}));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = b.data[o];
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                if (iy >= 0 && iy < 5 && ix >= 0 && ix < 6) acc += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          EXPECT_NEAR(y.value().at(n, o, oy, ox), acc, 1e-12);
        }
}

TEST(OpGradients, Conv2dStridedAndPadded) {
  std::mt19937_64 rng(2);
  for (int stride : {1, 2}) {
    auto f = [stride](const std::vector<Var<double>>& v) {
      return probe(ops::conv2d(v[0], v[1], v[2], stride, 1), 7);
    };
    EXPECT_LT(gradient_error(f, {random_tensor(Shape{2, 2, 6, 4}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
                                 random_tensor(Shape{1, 3, 1, 1}, rng)}),
              1e-6);
  }
}

TEST(OpGradients, BatchNormLinearActivations) {
  std::mt19937_64 rng(3);
  auto bn = [](const std::vector<Var<double>>& v) { return probe(ops::batch_norm(v[0], v[1], v[2]), 8); };
  EXPECT_LT(gradient_error(bn, {random_tensor(Shape{3, 2, 2, 3}, rng), random_tensor(Shape{1, 2, 1, 1}, rng),
                                random_tensor(Shape{1, 2, 1, 1}, rng)}),
            1e-5);
  auto lin = [](const std::vector<Var<double>>& v) { return probe(ops::linear(v[0], v[1], v[2]), 9); };
  EXPECT_LT(gradient_error(lin, {random_tensor(Shape{3, 5, 1, 1}, rng), random_tensor(Shape{4, 5, 1, 1}, rng),
                                 random_tensor(Shape{1, 4, 1, 1}, rng)}),
            1e-6);
  auto act = [](const std::vector<Var<double>>& v) {
    return probe(ops::add(ops::softplus(v[0]), ops::leaky_relu(v[1], 0.2)), 10);
  };
  EXPECT_LT(gradient_error(act, {random_tensor(Shape{2, 3, 2, 2}, rng, -4, 4), random_tensor(Shape{2, 3, 2, 2}, rng)}),
            1e-6);
}

TEST(OpGradients, LayoutOps) {
  std::mt19937_64 rng(4);
  auto f = [](const std::vector<Var<double>>& v) {
    auto cat = ops::concat_channels<double>({ops::upsample2x(v[0]), v[1]});
    auto both = ops::concat_batch<double>({cat, cat});
    return probe(ops::flatten(ops::slice_batch(both, 1, 2)), 11);
  };
  EXPECT_LT(gradient_error(f, {random_tensor(Shape{2, 2, 2, 3}, rng), random_tensor(Shape{2, 1, 4, 6}, rng)}), 1e-6);
}

TEST(Autodiff, SharedSubgraphAccumulates) {
  auto x = Var<double>::parameter(Tensor<double>::scalar(3.0));
  auto y = ops::add(ops::scale(x, 2.0), ops::scale(x, 5.0));
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(5);
  auto p = ops::softmax_channels(random_tensor(Shape{2, 4, 3, 3}, rng, -10, 10));
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(p.sample(n).col(i).sum(), 1.0, 1e-12);
  Tensor<double> zeros(Shape{1, 2, 1, 1});
  auto half = ops::softmax_channels(zeros);
  EXPECT_DOUBLE_EQ(half.data[0], 0.5);
  EXPECT_DOUBLE_EQ(half.data[1], 0.5);
}
