// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "timestudy/gradcheck.hpp"
#include "timestudy/tensor.hpp"

using ts::Tensor;

TEST(TensorBasics, ConstructionAndItem) {
    auto t = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_THROW(t.item(), std::invalid_argument);
    EXPECT_DOUBLE_EQ(Tensor<double>::scalar(7.5).item(), 7.5);
    EXPECT_THROW(Tensor<double>::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(TensorBasics, ZerosAndFull) {
    auto z = Tensor<float>::zeros({4});
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);
    auto f = Tensor<float>::full({2, 2}, 3.0f);
    for (float v : f.data()) EXPECT_EQ(v, 3.0f);
}

TEST(Broadcast, ShapeRules) {
    EXPECT_EQ(ts::broadcast_shape({2, 3}, {3}), (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(ts::broadcast_shape({4, 1, 5}, {3, 1}), (std::vector<std::size_t>{4, 3, 5}));
    EXPECT_EQ(ts::broadcast_shape({1}, {7}), (std::vector<std::size_t>{7}));
    EXPECT_THROW(ts::broadcast_shape({2, 3}, {4}), std::invalid_argument);
}

TEST(Elementwise, AddBroadcastValues) {
    auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::from_data({3}, {10, 20, 30});
    auto c = a + b;
    std::vector<double> want{11, 22, 33, 14, 25, 36};
    EXPECT_EQ(c.data(), want);
}

TEST(Elementwise, MulSubDiv) {
    auto a = Tensor<double>::from_data({3}, {2, 4, 9});
    auto b = Tensor<double>::from_data({3}, {2, 2, 3});
    EXPECT_EQ((a * b).data(), (std::vector<double>{4, 8, 27}));
    EXPECT_EQ((a - b).data(), (std::vector<double>{0, 2, 6}));
    EXPECT_EQ((a / b).data(), (std::vector<double>{1, 2, 3}));
}

TEST(Elementwise, DivByZeroThrows) {
    auto a = Tensor<double>::from_data({2}, {1, 2});
    auto b = Tensor<double>::from_data({2}, {1, 0});
    EXPECT_THROW(a / b, ts::numeric_error);
}

TEST(Reduce, SumAndMean) {
    auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(ts::reduce_sum(a, {0}).data(), (std::vector<double>{5, 7, 9}));
    EXPECT_EQ(ts::reduce_sum(a, {1}).data(), (std::vector<double>{6, 15}));
    EXPECT_EQ(ts::reduce_mean(a, {1}).data(), (std::vector<double>{2, 5}));
    EXPECT_DOUBLE_EQ(ts::sum_all(a).item(), 21.0);
    EXPECT_EQ(ts::reduce_sum(a, {0}, true).shape(), (std::vector<std::size_t>{1, 3}));
    EXPECT_THROW(ts::reduce_sum(a, {2}), std::invalid_argument);
}

TEST(Reshape, RoundTrip) {
    auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = ts::reshape(a, {3, 2});
    EXPECT_EQ(b.shape(), (std::vector<std::size_t>{3, 2}));
    EXPECT_EQ(b.data(), a.data());
    EXPECT_THROW(ts::reshape(a, {4}), std::invalid_argument);
}

TEST(Backward, SimpleChain) {
    auto x = Tensor<double>::from_data({3}, {1, 2, 3});
    x.set_requires_grad(true);
    auto y = ts::sum_all(x * x);  // d/dx = 2x
    ts::backward(y);
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, AccumulatesAcrossUses) {
    auto x = Tensor<double>::from_data({2}, {3, 5});
    x.set_requires_grad(true);
    auto y = ts::sum_all(x + x);  // gradient 2 per element
    ts::backward(y);
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 2}));
}

TEST(Backward, BroadcastReducesGradient) {
    auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from_data({2}, {10, 20});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    ts::backward(ts::sum_all(a * b));
    EXPECT_EQ(a.grad(), (std::vector<double>{10, 20, 10, 20}));
    EXPECT_EQ(b.grad(), (std::vector<double>{4, 6}));  // sums of a's columns
}

TEST(Backward, TwiceWithoutResetThrows) {
    auto x = Tensor<double>::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    auto y = ts::sum_all(x);
    ts::backward(y);
    EXPECT_THROW(ts::backward(y), std::logic_error);
}

TEST(Backward, NonScalarLossThrows) {
    auto x = Tensor<double>::from_data({2}, {1, 2});
    EXPECT_THROW(ts::backward(x), std::invalid_argument);
}

TEST(NoGrad, SuppressesTape) {
    auto x = Tensor<double>::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    ts::NoGradGuard ng;
    auto y = x * x;
    EXPECT_FALSE(static_cast<bool>(y.node()->backward_fn));
}

TEST(GradCheck, ElementwiseComposite) {
    ts::Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = Tensor<double>::randn({2, 3}, rng);
        auto c = Tensor<double>::randn({3}, rng);
        for (auto& v : c.data()) v = std::abs(v) + 1.0;  // safe divisor
        double err = ts::finite_difference_check<double>(
            [&](const Tensor<double>& t) { return ts::sum_all((t * t + t) / c); }, x, 1e-6);
        EXPECT_LT(err, 1e-7);
    }
}

TEST(GradCheck, SqrtAndMean) {
    ts::Rng rng(23);
    auto x = Tensor<double>::randn({4, 4}, rng);
    for (auto& v : x.data()) v = std::abs(v) + 0.5;
    double err = ts::finite_difference_check<double>(
        [&](const Tensor<double>& t) { return ts::sum_all(ts::reduce_mean(ts::sqrt_op(t), {1})); }, x, 1e-6);
    EXPECT_LT(err, 1e-8);
}

TEST(DebugChecks, FlagsNonFinite) {
    ts::debug_checks() = true;
    auto a = Tensor<double>::from_data({1}, {1e308});
    auto b = Tensor<double>::from_data({1}, {1e308});
    EXPECT_THROW(a * b, ts::numeric_error);
    ts::debug_checks() = false;
}
