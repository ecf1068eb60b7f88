#include <gtest/gtest.h>

#include <functional>

#include "marsnet/core/autograd.hpp"

using namespace marsnet;
using namespace marsnet::ag;

namespace {

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.vec()) v = rng.normal() * scale;
  return t;
}

// Scalar objective: sum of output weighted by a fixed random projection, so
// every output element contributes a distinct coefficient.
double objective(const std::vector<Param<double>>& params, const Builder& build, const Tensor<double>& proj) {
  Tape<double> tape(false);
  std::vector<Var> in;
  for (const auto& p : params) in.push_back(tape.constant(p.value));
  Var y = build(tape, in);
  const auto& yv = tape.value(y);
  double s = 0;
  for (std::size_t i = 0; i < yv.size(); ++i) s += yv[i] * proj[i];
  return s;
}

void check_op(std::vector<Param<double>> params, const Builder& build, double tol = 1e-6) {
  Rng rng(99);
  Tape<double> tape;
  std::vector<Var> in;
  for (auto& p : params) {
    p.zero_grad();
    in.push_back(tape.parameter(p));
  }
  Var y = build(tape, in);
  const Tensor<double> proj = random_tensor(tape.shape(y), rng);
  tape.backward(weighted_sum(tape, y, proj));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].value.size(); ++i) {
      const double h = 1e-6;
      auto plus = params, minus = params;
      plus[pi].value[i] += h;
      minus[pi].value[i] -= h;
      const double fd = (objective(plus, build, proj) - objective(minus, build, proj)) / (2 * h);
      EXPECT_NEAR(params[pi].grad[i], fd, tol * std::max(1.0, std::abs(fd))) << "param " << pi << " index " << i;
    }
  }
}

Param<double> make(Shape s, Rng& rng, double scale = 1.0, double offset = 0.0) {
  Param<double> p;
  p.value = random_tensor(s, rng, scale);
  for (auto& v : p.value.vec()) v += offset;
  return p;
}

}  // namespace

TEST(Autograd, Conv3x3WithBias) {
  Rng rng(1);
  check_op({make({2, 4, 5, 4}, rng), make({6, 4, 3, 3}, rng), make({1, 6, 1, 1}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2]); });
}

TEST(Autograd, GroupedConv) {
  Rng rng(2);
  check_op({make({2, 4, 4, 4}, rng), make({6, 2, 3, 3}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], Var{}, 2); });
}

TEST(Autograd, PointwiseConv) {
  Rng rng(3);
  check_op({make({2, 3, 4, 4}, rng), make({5, 3, 1, 1}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1]); });
}

TEST(Autograd, GroupNorm) {
  Rng rng(4);
  check_op({make({2, 4, 3, 3}, rng), make({1, 4, 1, 1}, rng, 0.5, 1.0), make({1, 4, 1, 1}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return group_norm(t, v[0], v[1], v[2], 2); });
}

TEST(Autograd, BatchNormTraining) {
  Rng rng(5);
  Param<double> rm, rv;
  rm.kind = rv.kind = ParamKind::buffer;
  rm.value = Tensor<double>({1, 3, 1, 1}, 0.0);
  rv.value = Tensor<double>({1, 3, 1, 1}, 1.0);
  check_op({make({3, 3, 2, 2}, rng), make({1, 3, 1, 1}, rng, 0.5, 1.0), make({1, 3, 1, 1}, rng)},
           [&](Tape<double>& t, const std::vector<Var>& v) {
             return batch_norm(t, v[0], v[1], v[2], rm, rv, true, false);
           });
}

TEST(Autograd, BatchNormEval) {
  Rng rng(6);
  Param<double> rm, rv;
  rm.kind = rv.kind = ParamKind::buffer;
  rm.value = Tensor<double>({1, 3, 1, 1}, 0.2);
  rv.value = Tensor<double>({1, 3, 1, 1}, 2.0);
  check_op({make({2, 3, 2, 2}, rng), make({1, 3, 1, 1}, rng), make({1, 3, 1, 1}, rng)},
           [&](Tape<double>& t, const std::vector<Var>& v) {
             return batch_norm(t, v[0], v[1], v[2], rm, rv, false, false);
           });
}

TEST(Autograd, PoolingUpsampleAndPointwise) {
  Rng rng(7);
  check_op({make({2, 2, 4, 6}, rng)}, [](Tape<double>& t, const std::vector<Var>& v) { return max_pool2(t, v[0]); });
  check_op({make({2, 2, 3, 4}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return upsample_bilinear2(t, v[0]); });
  check_op({make({1, 3, 3, 3}, rng)}, [](Tape<double>& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); });
  check_op({make({1, 3, 3, 3}, rng, 1.0, 0.3)},
           [](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); });
  check_op({make({2, 3, 3, 3}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return global_avg_pool(t, v[0]); });
}

TEST(Autograd, BroadcastProducts) {
  Rng rng(8);
  check_op({make({2, 3, 3, 2}, rng), make({2, 3, 1, 1}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return scale_channels(t, v[0], v[1]); });
  check_op({make({2, 3, 3, 2}, rng), make({1, 3, 1, 1}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return scale_channels(t, v[0], v[1]); });
  check_op({make({2, 3, 3, 2}, rng), make({2, 1, 3, 2}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return scale_spatial(t, v[0], v[1]); });
  check_op({make({2, 3, 3, 2}, rng), make({2, 3, 3, 2}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); });
}

TEST(Autograd, ConcatSliceSoftmaxNormalize) {
  Rng rng(9);
  check_op({make({2, 2, 2, 2}, rng), make({2, 3, 2, 2}, rng)}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var c = concat_channels(t, {v[0], v[1]});
    return slice_channels(t, c, 1, 3);
  });
  check_op({make({2, 4, 1, 1}, rng), make({2, 4, 1, 1}, rng)},
           [](Tape<double>& t, const std::vector<Var>& v) { return pair_softmax(t, v[0], v[1]); });
  check_op({make({1, 5, 1, 1}, rng, 1.0, 0.2)},
           [](Tape<double>& t, const std::vector<Var>& v) { return abs_normalize(t, v[0]); });
}

TEST(Autograd, PairSoftmaxSumsToExactlyOne) {
  Rng rng(10);
  Tape<double> tape(false);
  Tensor<double> a({4, 32, 1, 1}), b({4, 32, 1, 1});
  for (auto& v : a.vec()) v = rng.normal() * 10;
  for (auto& v : b.vec()) v = rng.normal() * 10;
  Var beta = pair_softmax(tape, tape.constant(a), tape.constant(b));
  const auto& y = tape.value(beta);
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 32; ++c) EXPECT_EQ(y(n, c, 0, 0) + y(n, 32 + c, 0, 0), 1.0);
}

TEST(Autograd, MaskedMse) {
  Tape<double> tape;
  Param<double> p;
  p.value = Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Var pred = tape.parameter(p);
  Tensor<double> label({1, 1, 2, 2}, std::vector<double>{0, 2, 5, 0});
  Tensor<double> mask({1, 1, 2, 2}, std::vector<double>{1, 1, 1, 0});
  Var loss = masked_mse(tape, pred, label, mask);
  EXPECT_DOUBLE_EQ(tape.value(loss)[0], (1.0 + 0.0 + 4.0) / 3.0);
  p.zero_grad();
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.grad[2], -4.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.grad[3], 0.0);
}

TEST(Autograd, ErrorsOnShapeMismatch) {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>({1, 2, 2, 2}));
  Var b = tape.constant(Tensor<double>({1, 3, 2, 2}));
  EXPECT_THROW(add(tape, a, b), Error);
  Var w = tape.constant(Tensor<double>({4, 3, 3, 3}));
  EXPECT_THROW(conv2d(tape, a, w), Error);
}
