#include <gtest/gtest.h>

#include <cstring>

#include "msann/ops.hpp"
#include "oracles.hpp"

using namespace msann;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool rg = false) {
    return Tensor::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

TEST(Conv2d, AllOnesSumsToKernelArea) {
    Tensor in = Tensor::filled({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::filled({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor out = conv2d(in, w, b, 1, 0);
    EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(out.data()[0], 9.0);
}

TEST(Conv2d, OneByOneKernelScales) {
    Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {2});
    Tensor b = Tensor::zeros({1});
    Tensor out = conv2d(in, w, b, 1, 0);
    EXPECT_EQ(out.data(), (std::vector<double>{2, 0, 0, 2}));
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
    Rng rng(7);
    Tensor in = random_tensor({2, 3, 8, 8}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor out = conv2d(in, w, b, 2, 1);
    EXPECT_EQ(out.shape(), (Shape{2, 4, 4, 4}));
    auto ref = oracle::conv2d(in.data(), 2, 3, 8, 8, w.data(), 4, 3, 3, b.data(), 2, 1);
    ASSERT_EQ(out.data().size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.data()[i], ref[i], 1e-12);
}

TEST(Conv2d, RejectsMismatchedShapes) {
    Tensor in = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({3, 5, 3, 3});  // channel mismatch
    Tensor b = Tensor::zeros({3});
    try {
        conv2d(in, w, b, 1, 0);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[1, 2, 4, 4]"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("[3, 5, 3, 3]"), std::string::npos);
    }
}

TEST(Conv2d, RejectsKernelLargerThanPaddedInput) {
    Tensor in = Tensor::zeros({1, 1, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    Tensor b = Tensor::zeros({1});
    EXPECT_THROW(conv2d(in, w, b, 1, 1), DimensionError);
}

TEST(Pooling, GlobalAvgPoolIsArithmeticMean) {
    Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor out = global_avg_pool(in);
    EXPECT_EQ(out.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(out.data()[0], 2.5);
}

TEST(Pooling, MaxPoolPicksMaximum) {
    Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor out = max_pool2d(in, 2, 2);
    EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(out.data()[0], 4.0);
}

TEST(Pooling, AvgPoolMatchesLoopOracle) {
    Rng rng(11);
    Tensor in = random_tensor({1, 2, 4, 4}, rng);
    Tensor out = avg_pool2d(in, 2, 2);
    auto ref = oracle::avg_pool2d(in.data(), 1, 2, 4, 4, 2, 2);
    ASSERT_EQ(out.data().size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.data()[i], ref[i], 1e-12);
}

TEST(Pooling, WindowLargerThanInputFails) {
    Tensor in = Tensor::zeros({1, 1, 2, 2});
    EXPECT_THROW(max_pool2d(in, 3, 1), DimensionError);
    EXPECT_THROW(avg_pool2d(in, 3, 1), DimensionError);
}

TEST(BatchNorm, ZeroMeanUnitVarianceInputPassesThrough) {
    Tensor in = Tensor::from_data({2, 1, 1, 1}, {-1.0, 1.0});
    Tensor gamma = Tensor::filled({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    RunningStats stats;
    Tensor out = batch_norm(in, gamma, beta, stats, Mode::kTrain, 0.9997, 1e-5);
    EXPECT_NEAR(out.data()[0], -1.0, 1e-4);
    EXPECT_NEAR(out.data()[1], 1.0, 1e-4);
}

TEST(BatchNorm, ZeroGammaYieldsBeta) {
    Rng rng(3);
    Tensor in = random_tensor({2, 3, 2, 2}, rng);
    Tensor gamma = Tensor::zeros({3});
    Tensor beta = Tensor::from_data({3}, {0.5, -1.0, 2.0});
    RunningStats stats;
    Tensor out = batch_norm(in, gamma, beta, stats, Mode::kTrain, 0.9997, 1e-5);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < 4; ++i)
                EXPECT_DOUBLE_EQ(out.data()[(n * 3 + c) * 4 + i], beta.data()[c]);
}

TEST(BatchNorm, NormalizesPerChannel) {
    Rng rng(5);
    Tensor in = random_tensor({4, 3, 2, 2}, rng);
    Tensor gamma = Tensor::filled({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    RunningStats stats;
    Tensor out = batch_norm(in, gamma, beta, stats, Mode::kTrain, 0.9997, 1e-5);
    const std::int64_t m = 4 * 2 * 2;
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t n = 0; n < 4; ++n)
            for (std::int64_t i = 0; i < 4; ++i) mean += out.data()[(n * 3 + c) * 4 + i];
        mean /= m;
        for (std::int64_t n = 0; n < 4; ++n)
            for (std::int64_t i = 0; i < 4; ++i) {
                const double d = out.data()[(n * 3 + c) * 4 + i] - mean;
                var += d * d;
            }
        var /= m;
        EXPECT_LT(std::abs(mean), 1e-6);
        EXPECT_NEAR(var, 1.0, 1e-3);  // up to the epsilon correction
    }
}

TEST(BatchNorm, EvalBeforeTrainFails) {
    Tensor in = Tensor::zeros({1, 2, 2, 2});
    Tensor gamma = Tensor::filled({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    RunningStats stats;
    EXPECT_THROW(batch_norm(in, gamma, beta, stats, Mode::kEval, 0.9997, 1e-5), ContractError);
}

TEST(BatchNorm, RunningStatsFollowDecay) {
    Rng rng(9);
    Tensor gamma = Tensor::filled({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    RunningStats stats;
    Tensor a = random_tensor({4, 1, 2, 2}, rng);
    batch_norm(a, gamma, beta, stats, Mode::kTrain, 0.9, 1e-5);
    const double first_mean = stats.mean[0];
    Tensor b = random_tensor({4, 1, 2, 2}, rng);
    double batch_mean = 0.0;
    for (double v : b.data()) batch_mean += v;
    batch_mean /= 16.0;
    batch_norm(b, gamma, beta, stats, Mode::kTrain, 0.9, 1e-5);
    EXPECT_NEAR(stats.mean[0], 0.9 * first_mean + 0.1 * batch_mean, 1e-12);
}

TEST(Elementwise, SigmoidAtZeroIsHalf) {
    Tensor out = sigmoid(Tensor::scalar(0.0));
    EXPECT_DOUBLE_EQ(out.data()[0], 0.5);
}

TEST(Elementwise, ReluClampsNegatives) {
    Tensor out = relu(Tensor::from_data({3}, {-2.0, 0.0, 3.5}));
    EXPECT_EQ(out.data(), (std::vector<double>{0.0, 0.0, 3.5}));
}

TEST(Linear, MatchesMatmulOracle) {
    Rng rng(13);
    Tensor in = random_tensor({2, 3}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor out = linear(in, w, b);
    auto ref = oracle::matmul_bias(in.data(), 2, 3, w.data(), 4, b.data());
    ASSERT_EQ(out.data().size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.data()[i], ref[i], 1e-12);
}

TEST(Concat, ConcatenatesRows) {
    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor b = Tensor::from_data({1, 2}, {3, 4});
    Tensor out = concat(a, b);
    EXPECT_EQ(out.shape(), (Shape{1, 4}));
    EXPECT_EQ(out.data(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Concat, MismatchedLeadingDimensionFails) {
    EXPECT_THROW(concat(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), DimensionError);
}

TEST(Dropout, EvalModeIsExactIdentity) {
    Rng rng(1);
    Tensor x = random_tensor({4, 4}, rng);
    Rng drop_rng(2);
    Tensor out = dropout(x, 0.5, Mode::kEval, drop_rng);
    EXPECT_EQ(out.node().get(), x.node().get());
}

TEST(Dropout, PreservesExpectation) {
    Rng rng(123);
    const int n = 100000;
    Tensor ones = Tensor::filled({n}, 1.0);
    Tensor out = dropout(ones, 0.5, Mode::kTrain, rng);
    double mean = 0.0;
    for (double v : out.data()) mean += v;
    mean /= n;
    EXPECT_NEAR(mean, 1.0, 0.01);
}

TEST(Dropout, RejectsInvalidRate) {
    Rng rng(1);
    Tensor x = Tensor::zeros({2});
    EXPECT_THROW(dropout(x, 1.0, Mode::kTrain, rng), ConfigError);
    EXPECT_THROW(dropout(x, -0.1, Mode::kTrain, rng), ConfigError);
}

// Output-extent formulas hold across a sweep of geometries.
TEST(ShapeAlgebra, ConvAndPoolExtentSweep) {
    Rng rng(21);
    for (std::int64_t H = 4; H <= 9; ++H)
        for (std::int64_t k = 1; k <= 3; ++k)
            for (std::int64_t s = 1; s <= 3; ++s)
                for (std::int64_t p = 0; p <= 2; ++p) {
                    if (k > H + 2 * p) continue;
                    Tensor in = random_tensor({1, 1, H, H}, rng);
                    Tensor w = random_tensor({2, 1, k, k}, rng);
                    Tensor b = Tensor::zeros({2});
                    Tensor out = conv2d(in, w, b, s, p);
                    const std::int64_t expect = (H + 2 * p - k) / s + 1;
                    EXPECT_EQ(out.shape(), (Shape{1, 2, expect, expect}));
                    if (p == 0 && k <= H) {
                        Tensor mp = max_pool2d(in, k, s);
                        EXPECT_EQ(mp.dim(2), (H - k) / s + 1);
                        Tensor ap = avg_pool2d(in, k, s);
                        EXPECT_EQ(ap.dim(3), (H - k) / s + 1);
                    }
                }
}

TEST(Determinism, SameSeedSameBits) {
    auto run = [] {
        Rng rng(99);
        Tensor in = random_tensor({2, 3, 6, 6}, rng, true);
        Tensor w = random_tensor({4, 3, 3, 3}, rng, true);
        Tensor b = random_tensor({4}, rng, true);
        Tensor out = relu(conv2d(in, w, b, 2, 1));
        Tensor loss = sum(mul(out, out));
        loss.backward();
        std::vector<double> all = out.data();
        all.insert(all.end(), in.grad().begin(), in.grad().end());
        all.insert(all.end(), w.grad().begin(), w.grad().end());
        return all;
    };
    auto a = run();
    auto b = run();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(std::memcmp(&a[i], &b[i], sizeof(double)), 0);
}
