#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "avatar/checkpoint.hpp"
#include "avatar/common.hpp"
#include "avatar/gradcheck.hpp"
#include "avatar/ops.hpp"
#include "avatar/optim.hpp"

using namespace avatar;

namespace {

std::vector<float> naive_conv(const std::vector<float>& x, int c, int h, int w, const std::vector<float>& k, int o,
                              int ks, int stride, int pad, int& ho, int& wo) {
  ho = (h + 2 * pad - ks) / stride + 1;
  wo = (w + 2 * pad - ks) / stride + 1;
  std::vector<float> out(o * ho * wo, 0.0f);
  for (int oc = 0; oc < o; ++oc)
    for (int y = 0; y < ho; ++y)
      for (int xo = 0; xo < wo; ++xo) {
        double acc = 0.0;
        for (int ic = 0; ic < c; ++ic)
          for (int i = 0; i < ks; ++i)
            for (int j = 0; j < ks; ++j) {
              const int iy = y * stride - pad + i, ix = xo * stride - pad + j;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(ic * h + iy) * w + ix] * k[((oc * c + ic) * ks + i) * ks + j];
            }
        out[(oc * ho + y) * wo + xo] = static_cast<float>(acc);
      }
  return out;
}

std::vector<float> random_values(size_t n, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST(Conv2d, OnesTimesTwo) {
  auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
  auto k = Tensor::full({1, 1, 1, 1}, 2.0f);
  auto y = ops::conv2d(x, k);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (float v : y.values()) EXPECT_FLOAT_EQ(v, 2.0f);
}

TEST(Conv2d, RampAveragingMatchesNaiveLoop) {
  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = static_cast<float>(i);
  std::vector<float> avg(9, 1.0f / 9.0f);
  auto y = ops::conv2d(Tensor::from({1, 1, 4, 4}, ramp), Tensor::from({1, 1, 3, 3}, avg), 1, 1);
  int ho, wo;
  auto expected = naive_conv(ramp, 1, 4, 4, avg, 1, 3, 1, 1, ho, wo);
  ASSERT_EQ(y.shape(), (Shape{1, 1, ho, wo}));
  for (size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.values()[i], expected[i], 1e-5);
}

TEST(Conv2d, RandomStridedMatchesNaiveLoop) {
  std::mt19937_64 rng(3);
  auto x = random_values(3 * 7 * 7, rng);
  auto k = random_values(4 * 3 * 3 * 3, rng);
  auto y = ops::conv2d(Tensor::from({1, 3, 7, 7}, x), Tensor::from({4, 3, 3, 3}, k), 2, 1);
  int ho, wo;
  auto expected = naive_conv(x, 3, 7, 7, k, 4, 3, 2, 1, ho, wo);
  ASSERT_EQ(y.shape(), (Shape{1, 4, ho, wo}));
  for (size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.values()[i], expected[i], 1e-5);
}

TEST(Conv2d, ZeroKernelGivesZeros) {
  std::mt19937_64 rng(1);
  auto y = ops::conv2d(Tensor::from({1, 2, 5, 5}, random_values(50, rng)), Tensor::zeros({3, 2, 3, 3}), 1, 1);
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(2);
  auto xv = random_values(16, rng);
  auto y = ops::conv2d(Tensor::from({1, 1, 4, 4}, xv), Tensor::full({1, 1, 1, 1}, 1.0f));
  for (size_t i = 0; i < xv.size(); ++i) EXPECT_EQ(y.values()[i], xv[i]);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3})), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 0, 0), ShapeError);
}

TEST(Ops, NaiveLoopOracles) {
  std::mt19937_64 rng(11);
  auto xv = random_values(2 * 4 * 4, rng);
  auto x = Tensor::from({1, 2, 4, 4}, xv);

  auto up = ops::upsample2x(x);
  ASSERT_EQ(up.shape(), (Shape{1, 2, 8, 8}));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx)
        EXPECT_EQ(up.values()[(c * 8 + y) * 8 + xx], xv[(c * 4 + y / 2) * 4 + xx / 2]);

  auto pool = ops::avgpool2x(x);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) {
        double s = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) s += xv[(c * 4 + 2 * y + a) * 4 + 2 * xx + b];
        EXPECT_NEAR(pool.values()[(c * 2 + y) * 2 + xx], s / 4.0, 1e-6);
      }

  auto cat = ops::concat_channels({x, ops::scale(x, 2.0f)});
  ASSERT_EQ(cat.shape(), (Shape{1, 4, 4, 4}));
  for (int i = 0; i < 32; ++i) {
    EXPECT_EQ(cat.values()[i], xv[i]);
    EXPECT_EQ(cat.values()[32 + i], 2.0f * xv[i]);
  }

  auto lr = ops::leaky_relu(x, 0.2f);
  auto sg = ops::sigmoid(x);
  auto th = ops::tanh(x);
  auto ad = ops::add(x, x);
  auto mu = ops::mul(x, x);
  for (size_t i = 0; i < xv.size(); ++i) {
    EXPECT_FLOAT_EQ(lr.values()[i], xv[i] > 0 ? xv[i] : 0.2f * xv[i]);
    EXPECT_NEAR(sg.values()[i], 1.0 / (1.0 + std::exp(-xv[i])), 1e-6);
    EXPECT_NEAR(th.values()[i], std::tanh(xv[i]), 1e-6);
    EXPECT_FLOAT_EQ(ad.values()[i], 2 * xv[i]);
    EXPECT_FLOAT_EQ(mu.values()[i], xv[i] * xv[i]);
  }

  auto in = ops::instance_norm(x);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 16; ++i) m += xv[c * 16 + i];
    m /= 16;
    for (int i = 0; i < 16; ++i) v += (xv[c * 16 + i] - m) * (xv[c * 16 + i] - m);
    v /= 16;
    for (int i = 0; i < 16; ++i)
      EXPECT_NEAR(in.values()[c * 16 + i], (xv[c * 16 + i] - m) / std::sqrt(v + 1e-5), 1e-5);
  }

  auto yv = random_values(xv.size(), rng);
  auto y = Tensor::from({1, 2, 4, 4}, yv);
  double se = 0, ae = 0;
  for (size_t i = 0; i < xv.size(); ++i) {
    se += (xv[i] - yv[i]) * (xv[i] - yv[i]);
    ae += std::abs(xv[i] - yv[i]);
  }
  EXPECT_NEAR(ops::mse(x, y).item(), se / xv.size(), 1e-6);
  EXPECT_NEAR(ops::l1(x, y).item(), ae / xv.size(), 1e-6);
}

TEST(Ops, AvgPoolOddSizeThrows) { EXPECT_THROW(ops::avgpool2x(Tensor::zeros({1, 1, 3, 4})), ShapeError); }

TEST(Backward, SumOfSquares) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  backward(ops::sum(ops::mul(x, x)));
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[2], 6.0f);
}

TEST(Backward, DetachedInputGetsZeroGrad) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  auto y = Tensor::from({3}, {4, 5, 6}, true);
  auto loss = ops::sum(ops::mul(y, y));
  backward(loss);
  for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
  auto xd = x.detach();
  EXPECT_FALSE(xd.requires_grad());
}

TEST(Backward, ContractErrors) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(ops::mul(x, x)), ContractError);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), ContractError);
  EXPECT_THROW(backward(ops::sum(Tensor::from({2}, {1, 2}))), ContractError);
}

TEST(Backward, IndependentGraphsConcatenate) {
  std::mt19937_64 rng(5);
  auto a = Tensor::from({1, 1, 4, 4}, random_values(16, rng), true);
  auto b = Tensor::from({1, 1, 4, 4}, random_values(16, rng), true);
  auto fa = [](const Tensor& t) { return ops::sum(ops::tanh(ops::mul(t, t))); };
  auto fb = [](const Tensor& t) { return ops::mse(ops::sigmoid(t), ops::scale(t, 0.5f)); };

  backward(ops::add(fa(a), fb(b)));
  std::vector<float> ga(a.grad().begin(), a.grad().end()), gb(b.grad().begin(), b.grad().end());
  a.zero_grad();
  b.zero_grad();
  backward(fa(a));
  backward(fb(b));
  for (int i = 0; i < 16; ++i) {
    EXPECT_FLOAT_EQ(ga[i], a.grad()[i]);
    EXPECT_FLOAT_EQ(gb[i], b.grad()[i]);
  }
}

TEST(Backward, FiniteDifferenceSuite) {
  for (const auto& r : tensor_gradcheck_suite(1)) {
    EXPECT_TRUE(r.passed()) << r.name << " rel err " << r.max_rel_error;
  }
}

TEST(Backward, RandomConvNetProperty) {
  // Property: gradient check holds for random 2-layer nets over several seeds.
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> in{Tensor::from({1, 2, 5, 5}, random_values(50, rng)),
                           Tensor::from({3, 2, 3, 3}, random_values(54, rng)),
                           Tensor::from({2, 3, 3, 3}, random_values(54, rng))};
    const double err = tensor_grad_error(
        [](const auto& t) { return ops::conv2d(ops::tanh(ops::conv2d(t[0], t[1], 1, 1)), t[2], 1, 1); }, in, 1e-3,
        seed);
    EXPECT_LT(err, 1e-3) << "seed " << seed;
  }
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<Tensor> p{Tensor::from({3}, {1, -2, 3}, true)};
  p[0].mutable_grad();
  AdamState st;
  adam_step(p, st, {});
  EXPECT_EQ(p[0].values()[0], 1.0f);
  EXPECT_EQ(p[0].values()[1], -2.0f);
  for (float m : st.m[0]) EXPECT_EQ(m, 0.0f);
  for (float v : st.v[0]) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ConstantGradientMovesOpposite) {
  std::vector<Tensor> p{Tensor::from({2}, {0, 0}, true)};
  AdamState st;
  for (int i = 0; i < 50; ++i) {
    p[0].zero_grad();
    p[0].mutable_grad()[0] = 0.5f;
    p[0].mutable_grad()[1] = -2.0f;
    adam_step(p, st, {0.01f});
  }
  EXPECT_LT(p[0].values()[0], 0.0f);
  EXPECT_GT(p[0].values()[1], 0.0f);
}

TEST(Adam, ClipGradNorm) {
  // Joint norm of (3, 4) and (12) is 13.
  std::vector<Tensor> p{Tensor::from({2}, {0, 0}, true), Tensor::from({1}, {0}, true)};
  p[0].mutable_grad()[0] = 3;
  p[0].mutable_grad()[1] = 4;
  p[1].mutable_grad()[0] = 12;
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 26.0), 13.0);
  EXPECT_EQ(p[1].grad()[0], 12.0f);
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.3), 13.0);
  EXPECT_FLOAT_EQ(p[0].grad()[0], 0.3f);
  EXPECT_FLOAT_EQ(p[0].grad()[1], 0.4f);
  EXPECT_FLOAT_EQ(p[1].grad()[0], 1.2f);
}

TEST(Adam, ThreeStepsMatchHandRecurrence) {
  // Gradients 1.0, -0.5, 2.0 on a scalar starting at 1.0; lr 0.1.
  // Hand recurrence (beta1 0.9, beta2 0.999, eps 1e-8):
  //  t1: m=0.1,      v=0.001        mhat=1,        vhat=1          -> x=0.9
  //  t2: m=0.04,     v=0.001249     mhat=0.2105263 vhat=0.6248124  -> x=0.8733663
  //  t3: m=0.236,    v=0.00524775   mhat=0.8708487 vhat=1.7510008  -> x=0.8075551
  std::vector<Tensor> p{Tensor::from({1}, {1.0f}, true)};
  AdamState st;
  const float grads[] = {1.0f, -0.5f, 2.0f};
  const double expected[] = {0.9, 0.8733663, 0.8075551};
  for (int i = 0; i < 3; ++i) {
    p[0].zero_grad();
    p[0].mutable_grad()[0] = grads[i];
    adam_step(p, st, {0.1f});
    EXPECT_NEAR(p[0].values()[0], expected[i], 2e-6) << "step " << i + 1;
  }
}

TEST(Adam, NonFiniteGradientAborts) {
  std::vector<Tensor> p{Tensor::from({2}, {1, 2}, true)};
  p[0].mutable_grad()[1] = std::nanf("");
  AdamState st;
  EXPECT_THROW(adam_step(p, st, {}), NumericalError);
  EXPECT_EQ(p[0].values()[0], 1.0f);
  EXPECT_EQ(st.step, 0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    Checkpoint c;
    c.metadata = R"({"levels":4})";
    const int count = 1 + trial;
    for (int i = 0; i < count; ++i) {
      Shape s{1 + static_cast<int>(rng() % 3), 2, 1 + static_cast<int>(rng() % 4)};
      auto v = random_values(shape_numel(s), rng, -1e6f, 1e6f);
      v[0] = -0.0f;
      c.tensors.push_back({"t" + std::to_string(i), Tensor::from(s, v)});
    }
    const auto bytes = encode_checkpoint(c);
    const auto d = decode_checkpoint(bytes);
    EXPECT_EQ(d.metadata, c.metadata);
    ASSERT_EQ(d.tensors.size(), c.tensors.size());
    for (size_t i = 0; i < c.tensors.size(); ++i) {
      EXPECT_EQ(d.tensors[i].name, c.tensors[i].name);
      EXPECT_EQ(d.tensors[i].tensor.shape(), c.tensors[i].tensor.shape());
      EXPECT_EQ(0, std::memcmp(d.tensors[i].tensor.values().data(), c.tensors[i].tensor.values().data(),
                               4 * c.tensors[i].tensor.numel()));
    }
    EXPECT_EQ(encode_checkpoint(d), bytes);
  }
}

TEST(Checkpoint, LayoutIsDocumentedLittleEndian) {
  Checkpoint c;
  c.tensors.push_back({"w", Tensor::from({2}, {1.0f, -2.0f})});
  const auto b = encode_checkpoint(c);
  ASSERT_EQ(b.size(), 8u + 4 + 4 + 4 + (4 + 1) + 4 + 4 + 8);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), std::string("AVCKPT\r\n"));
  EXPECT_EQ(b[8], 1);  // version
  EXPECT_EQ(b[16], 1);  // count
  // 1.0f = 0x3f800000 little-endian at the start of the payload
  const size_t payload = b.size() - 8;
  EXPECT_EQ(b[payload + 3], 0x3f);
  EXPECT_EQ(b[payload + 2], 0x80);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  Checkpoint c;
  c.tensors.push_back({"w", Tensor::from({2}, {1.0f, 2.0f})});
  auto b = encode_checkpoint(c);
  auto bad = b;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), DataError);
  b.pop_back();
  EXPECT_THROW(decode_checkpoint(b), DataError);
}
