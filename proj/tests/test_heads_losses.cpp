#include <gtest/gtest.h>

#include <algorithm>

#include "msann/heads.hpp"
#include "oracles.hpp"

using namespace msann;

TEST(Classify, ZeroWeightsGiveHalfProbabilities) {
    Rng rng(1);
    ClassifierHead head(4, 3, rng);
    std::fill(head.fc.weight.data().begin(), head.fc.weight.data().end(), 0.0);
    Tensor f = Tensor::randn({2, 4}, rng);
    auto out = classify(head, f);
    for (double p : out.probs.data()) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(Classify, LogitLnThreeGivesThreeQuarters) {
    Tensor z = Tensor::from_data({1, 1}, {std::log(3.0)});
    Tensor p = sigmoid(z);
    EXPECT_NEAR(p.data()[0], 0.75, 1e-12);
}

TEST(Classify, MatchesMatmulSigmoidOracle) {
    Rng rng(2);
    ClassifierHead head(5, 4, rng);
    Tensor f = Tensor::randn({3, 5}, rng);
    auto out = classify(head, f);
    auto z_ref = oracle::matmul_bias(f.data(), 3, 5, head.fc.weight.data(), 4, head.fc.bias.data());
    for (std::size_t i = 0; i < z_ref.size(); ++i) {
        EXPECT_NEAR(out.logits.data()[i], z_ref[i], 1e-12);
        EXPECT_NEAR(out.probs.data()[i], sigmoid_scalar(z_ref[i]), 1e-12);
    }
}

TEST(Classify, FeatureDimMismatchFails) {
    Rng rng(3);
    ClassifierHead head(5, 4, rng);
    EXPECT_THROW(classify(head, Tensor::zeros({2, 6})), DimensionError);
}

TEST(ClsLoss, SingleZeroLogitPositiveLabelIsLnTwo) {
    LabelMatrix y = LabelMatrix::from_sets({{0}}, 1);
    Tensor z = Tensor::zeros({1, 1});
    EXPECT_NEAR(cls_loss(z, y).item(), std::log(2.0), 1e-12);
}

TEST(ClsLoss, ConfidentCorrectPredictionApproachesZero) {
    LabelMatrix y = LabelMatrix::from_sets({{0}}, 1);
    Tensor z = Tensor::from_data({1, 1}, {30.0});  // p -> 1
    EXPECT_LT(cls_loss(z, y).item(), 1e-12);
}

TEST(ClsLoss, EqualsDirectFormulaOracle) {
    Rng rng(4);
    Tensor z = Tensor::randn({3, 4}, rng, 1.5);
    LabelMatrix y = LabelMatrix::from_sets({{0, 2}, {1}, {0, 1, 3}}, 4);
    double direct = 0.0;
    for (std::size_t i = 0; i < y.y.size(); ++i) {
        const double p = sigmoid_scalar(z.data()[i]);
        direct += y.y[i] * -std::log(p) + (1.0 - y.y[i]) * -std::log(1.0 - p);
    }
    EXPECT_NEAR(cls_loss(z, y).item(), direct, 1e-12);
}

// Logit-space loss equals the probability-space formula wherever the
// probabilities stay away from the boundary.
TEST(ClsLoss, LogitAndProbabilityPathsAgree) {
    Rng rng(5);
    Tensor z = Tensor::randn({4, 5}, rng, 2.0);
    LabelMatrix y = LabelMatrix::from_sets({{0}, {1, 2}, {3}, {0, 4}}, 5);
    std::vector<double> probs(z.data().size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        probs[i] = std::clamp(sigmoid_scalar(z.data()[i]), 1e-12, 1.0 - 1e-12);
    EXPECT_NEAR(cls_loss(z, y).item(), cls_loss_from_probs(probs, y), 1e-9);
}

TEST(ClsLoss, ProbabilityOutsideUnitIntervalIsDomainError) {
    LabelMatrix y = LabelMatrix::from_sets({{0}}, 2);
    EXPECT_THROW(cls_loss_from_probs({0.5, 1.0}, y), DomainError);
    EXPECT_THROW(cls_loss_from_probs({-0.1, 0.5}, y), DomainError);
}

TEST(ClsLoss, GradientIsProbMinusLabel) {
    Rng rng(6);
    Tensor z = Tensor::randn({2, 3}, rng, 1.0, true);
    LabelMatrix y = LabelMatrix::from_sets({{0, 2}, {1}}, 3);
    cls_loss(z, y).backward();
    for (std::size_t i = 0; i < y.y.size(); ++i)
        EXPECT_NEAR(z.grad()[i], sigmoid_scalar(z.data()[i]) - y.y[i], 1e-9);
}

TEST(ClsLoss, PermutationInvariantOverImagesAndClasses) {
    Rng rng(7);
    Tensor z = Tensor::randn({3, 4}, rng, 1.0);
    LabelMatrix y = LabelMatrix::from_sets({{0, 1}, {2}, {1, 3}}, 4);
    const double base = cls_loss(z, y).item();

    // Permute images.
    std::vector<std::int64_t> img_perm = {2, 0, 1};
    std::vector<double> z_img(z.data().size());
    std::vector<std::vector<std::int64_t>> sets = {{0, 1}, {2}, {1, 3}};
    std::vector<std::vector<std::int64_t>> sets_img(3);
    for (std::int64_t i = 0; i < 3; ++i) {
        sets_img[static_cast<std::size_t>(i)] = sets[static_cast<std::size_t>(img_perm[i])];
        for (std::int64_t j = 0; j < 4; ++j)
            z_img[static_cast<std::size_t>(i * 4 + j)] =
                z.data()[static_cast<std::size_t>(img_perm[i] * 4 + j)];
    }
    EXPECT_NEAR(cls_loss(Tensor::from_data({3, 4}, z_img), LabelMatrix::from_sets(sets_img, 4)).item(),
                base, 1e-12);

    // Permute classes consistently in logits and labels.
    std::vector<std::int64_t> cls_perm = {3, 1, 0, 2};  // new j <- old cls_perm[j]
    std::vector<double> z_cls(z.data().size());
    std::vector<std::vector<std::int64_t>> sets_cls(3);
    std::vector<std::int64_t> inverse(4);
    for (std::int64_t j = 0; j < 4; ++j) inverse[static_cast<std::size_t>(cls_perm[j])] = j;
    for (std::int64_t i = 0; i < 3; ++i) {
        for (std::int64_t j = 0; j < 4; ++j)
            z_cls[static_cast<std::size_t>(i * 4 + j)] =
                z.data()[static_cast<std::size_t>(i * 4 + cls_perm[j])];
        for (auto lbl : sets[static_cast<std::size_t>(i)])
            sets_cls[static_cast<std::size_t>(i)].push_back(inverse[static_cast<std::size_t>(lbl)]);
    }
    EXPECT_NEAR(cls_loss(Tensor::from_data({3, 4}, z_cls), LabelMatrix::from_sets(sets_cls, 4)).item(),
                base, 1e-12);
}

TEST(QuantityRegress, ZeroWeightsYieldBias) {
    Rng rng(8);
    QuantityRegressor reg(4, 3, 2, rng);
    for (auto* layer : {&reg.fc1, &reg.fc2, &reg.fc3})
        std::fill(layer->weight.data().begin(), layer->weight.data().end(), 0.0);
    reg.fc3.bias.data()[0] = 2.5;
    Tensor f = Tensor::randn({3, 4}, rng);
    Rng drop(9);
    Tensor m_hat = quantity_regress(reg, f, Mode::kEval, drop);
    EXPECT_EQ(m_hat.shape(), (Shape{3}));
    for (double v : m_hat.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(QuantityRegress, EvalModeIsDeterministic) {
    Rng rng(10);
    QuantityRegressor reg(4, 3, 2, rng);
    Tensor f = Tensor::randn({2, 4}, rng);
    Rng drop_a(1), drop_b(2);  // different streams must not matter in eval
    Tensor a = quantity_regress(reg, f, Mode::kEval, drop_a);
    Tensor b = quantity_regress(reg, f, Mode::kEval, drop_b);
    EXPECT_EQ(a.data(), b.data());
}

TEST(QuantityRegress, MatchesMlpOracle) {
    Rng rng(11);
    QuantityRegressor reg(5, 4, 3, rng);
    Tensor f = Tensor::randn({2, 5}, rng);
    Rng drop(12);
    Tensor m_hat = quantity_regress(reg, f, Mode::kEval, drop);
    auto h1 = oracle::matmul_bias(f.data(), 2, 5, reg.fc1.weight.data(), 4, reg.fc1.bias.data());
    for (auto& v : h1) v = std::max(0.0, v);
    auto h2 = oracle::matmul_bias(h1, 2, 4, reg.fc2.weight.data(), 3, reg.fc2.bias.data());
    for (auto& v : h2) v = std::max(0.0, v);
    auto ref = oracle::matmul_bias(h2, 2, 3, reg.fc3.weight.data(), 1, reg.fc3.bias.data());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(m_hat.data()[i], ref[i], 1e-12);
}

TEST(RegLoss, ExactPredictionIsZero) {
    Tensor m_hat = Tensor::from_data({3}, {1, 2, 3});
    EXPECT_DOUBLE_EQ(reg_loss(m_hat, {1, 2, 3}).item(), 0.0);
}

TEST(RegLoss, HalfOffIsQuarter) {
    Tensor m_hat = Tensor::from_data({1}, {3.5});
    EXPECT_DOUBLE_EQ(reg_loss(m_hat, {3.0}).item(), 0.25);
}

TEST(RegLoss, EqualsDirectFormulaOracle) {
    Rng rng(13);
    Tensor m_hat = Tensor::randn({7}, rng, 2.0);
    std::vector<double> m(7);
    for (auto& v : m) v = rng.uniform(1.0, 6.0);
    double direct = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = m_hat.data()[i] - m[i];
        direct += d * d;
    }
    EXPECT_NEAR(reg_loss(m_hat, m).item(), direct, 1e-12);
}

TEST(RegLoss, GradientIsTwiceResidualViaAutodiff) {
    Tensor m_hat = Tensor::from_data({2}, {2.0, 4.5}, true);
    reg_loss(m_hat, {3.0, 4.0}).backward();
    EXPECT_NEAR(m_hat.grad()[0], 2.0 * (2.0 - 3.0), 1e-12);
    EXPECT_NEAR(m_hat.grad()[1], 2.0 * (4.5 - 4.0), 1e-12);
}

TEST(QuantityClassifier, UniformLogitsGiveUniformProbabilities) {
    Rng rng(14);
    QuantityClassifierHead head(3, 4, 4, 4, rng);
    Tensor logits = Tensor::zeros({1, 4});
    // Softmax of all-equal logits: every category at 0.25.
    std::vector<std::int64_t> pred = head.predict(logits);
    EXPECT_EQ(pred[0], 1);  // earliest category on ties
    Tensor ce = head.loss(logits, {2.0});
    EXPECT_NEAR(ce.item(), -std::log(0.25), 1e-12);
}

TEST(QuantityClassifier, ArgmaxPicksCategory) {
    Rng rng(15);
    QuantityClassifierHead head(3, 4, 4, 3, rng);
    Tensor logits = Tensor::from_data({1, 3}, {0.0, 10.0, 0.0});
    EXPECT_EQ(head.predict(logits)[0], 2);
}

TEST(QuantityClassifier, CrossEntropyMatchesLogSoftmaxOracle) {
    Rng rng(16);
    QuantityClassifierHead head(3, 4, 4, 5, rng);
    Tensor logits = Tensor::randn({3, 5}, rng, 1.5);
    std::vector<double> m = {2.0, 5.0, 1.0};
    double direct = 0.0;
    for (std::int64_t i = 0; i < 3; ++i) {
        double denom = 0.0;
        for (std::int64_t j = 0; j < 5; ++j)
            denom += std::exp(logits.data()[static_cast<std::size_t>(i * 5 + j)]);
        const auto cat = static_cast<std::int64_t>(m[static_cast<std::size_t>(i)]) - 1;
        direct += -std::log(std::exp(logits.data()[static_cast<std::size_t>(i * 5 + cat)]) / denom);
    }
    EXPECT_NEAR(head.loss(logits, m).item(), direct, 1e-9);
}

TEST(QuantityClassifier, QuantityBeyondRangeFails) {
    Rng rng(17);
    QuantityClassifierHead head(3, 4, 4, 3, rng);
    Tensor logits = Tensor::zeros({1, 3});
    EXPECT_THROW(head.loss(logits, {4.0}), ConfigError);
    EXPECT_THROW(head.loss(logits, {0.0}), ConfigError);
}

TEST(LabelMatrix, RequiresAtLeastOneLabelPerImage) {
    EXPECT_THROW(LabelMatrix::from_sets({{0}, {}}, 2), ConfigError);
}

TEST(LabelMatrix, QuantitiesAreRowSums) {
    LabelMatrix y = LabelMatrix::from_sets({{0, 2}, {1}}, 3);
    EXPECT_EQ(y.quantities, (std::vector<double>{2.0, 1.0}));
}

TEST(LossReductionToggle, BatchMeanDividesByImages) {
    Rng rng(20);
    Tensor z = Tensor::randn({4, 3}, rng, 1.0);
    LabelMatrix y = LabelMatrix::from_sets({{0}, {1}, {2}, {0, 1}}, 3);
    EXPECT_NEAR(cls_loss(z, y, LossReduction::kBatchMean).item(), cls_loss(z, y).item() / 4.0,
                1e-12);
    Tensor m_hat = Tensor::from_data({4}, {1.5, 2.0, 3.5, 1.0});
    std::vector<double> m = {1, 2, 3, 2};
    EXPECT_NEAR(reg_loss(m_hat, m, LossReduction::kBatchMean).item(),
                reg_loss(m_hat, m).item() / 4.0, 1e-12);
}
