#include <gtest/gtest.h>

#include "msann/tag_branch.hpp"
#include "oracles.hpp"

using namespace msann;

TEST(BuildVocabulary, KeepsMostFrequentTags) {
    std::vector<std::vector<std::string>> corpus = {{"a", "b"}, {"a", "c"}, {"a", "b"}};
    TagVocabulary vocab = build_vocabulary(corpus, 2);
    ASSERT_EQ(vocab.size(), 2);
    EXPECT_EQ(vocab.tag(0), "a");  // count 3
    EXPECT_EQ(vocab.tag(1), "b");  // count 2
}

TEST(BuildVocabulary, TiesBreakLexicographically) {
    std::vector<std::vector<std::string>> corpus = {{"b", "a"}, {"a", "b"}};
    TagVocabulary vocab = build_vocabulary(corpus, 1);
    ASSERT_EQ(vocab.size(), 1);
    EXPECT_EQ(vocab.tag(0), "a");
}

TEST(BuildVocabulary, SmallCorpusYieldsSmallerVocabulary) {
    std::vector<std::vector<std::string>> corpus = {{"x", "y"}};
    TagVocabulary vocab = build_vocabulary(corpus, 10);
    EXPECT_EQ(vocab.size(), 2);
}

TEST(BuildVocabulary, EmptyCorpusFails) {
    EXPECT_THROW(build_vocabulary({}, 5), ConfigError);
    EXPECT_THROW(build_vocabulary({{}, {}}, 5), ConfigError);
}

TEST(TagVocabulary, EncodeDropsUnknownTags) {
    TagVocabulary vocab({"sky", "sea", "sun"});
    TagVector v = vocab.encode({"sea", "volcano", "sun"});
    EXPECT_EQ(v, (TagVector{0, 1, 1}));
}

TEST(TagVocabulary, FileRoundTrip) {
    TagVocabulary vocab({"alpha", "beta", "gamma"});
    const std::string path = testing::TempDir() + "vocab_roundtrip.txt";
    vocab.save(path);
    TagVocabulary loaded = TagVocabulary::load(path);
    EXPECT_EQ(loaded.tags(), vocab.tags());
    EXPECT_EQ(loaded.index_of("beta"), 1);
}

TEST(EncodeTags, ZeroInputWithZeroBiasesGivesZero) {
    Rng rng(1);
    TextualMLP mlp(4, 3, 2, rng);  // biases start at zero
    Tensor t = Tensor::zeros({2, 4});
    Tensor f = encode_tags(mlp, t);
    for (double v : f.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EncodeTags, OneHotSelectsFirstLayerColumnThroughRelu) {
    Rng rng(2);
    const std::int64_t dim = 3;
    TextualMLP mlp(dim, dim, dim, rng);
    // Hidden and output layers become identities; the first layer keeps its
    // random weights, so a one-hot input reproduces ReLU(W1 row j).
    auto identity = [&](LinearLayer& layer) {
        std::fill(layer.weight.data().begin(), layer.weight.data().end(), 0.0);
        for (std::int64_t i = 0; i < dim; ++i) layer.weight.data()[i * dim + i] = 1.0;
    };
    identity(mlp.fc2);
    identity(mlp.fc3);

    for (std::int64_t j = 0; j < dim; ++j) {
        std::vector<double> onehot(dim, 0.0);
        onehot[static_cast<std::size_t>(j)] = 1.0;
        Tensor t = Tensor::from_data({1, dim}, onehot);
        Tensor f = encode_tags(mlp, t);
        for (std::int64_t e = 0; e < dim; ++e) {
            const double expected = std::max(0.0, mlp.fc1.weight.data()[j * dim + e]);
            EXPECT_NEAR(f.data()[static_cast<std::size_t>(e)], expected, 1e-12);
        }
    }
}

TEST(EncodeTags, MatchesTwoLayerMatmulOracle) {
    Rng rng(3);
    TextualMLP mlp(5, 4, 3, rng);
    Tensor t = Tensor::from_data({2, 5}, {1, 0, 1, 1, 0, 0, 1, 0, 0, 1});
    Tensor f = encode_tags(mlp, t);

    auto h1 = oracle::matmul_bias(t.data(), 2, 5, mlp.fc1.weight.data(), 4, mlp.fc1.bias.data());
    for (auto& v : h1) v = std::max(0.0, v);
    auto h2 = oracle::matmul_bias(h1, 2, 4, mlp.fc2.weight.data(), 4, mlp.fc2.bias.data());
    for (auto& v : h2) v = std::max(0.0, v);
    auto ref = oracle::matmul_bias(h2, 2, 4, mlp.fc3.weight.data(), 3, mlp.fc3.bias.data());
    ASSERT_EQ(f.data().size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(f.data()[i], ref[i], 1e-12);
}

TEST(EncodeTags, WrongVectorLengthIsVocabularyError) {
    Rng rng(4);
    TextualMLP mlp(4, 3, 2, rng);
    EXPECT_THROW(encode_tags(mlp, Tensor::zeros({1, 5})), DimensionError);
}

// Permutation equivariance: reindexing the vocabulary together with the
// first-layer weight rows leaves the encoding unchanged.
TEST(EncodeTags, PermutationEquivariant) {
    Rng rng(5);
    const std::int64_t T = 6, W = 4, D = 3;
    TextualMLP mlp(T, W, D, rng);
    std::vector<double> input = {1, 0, 1, 0, 0, 1};
    Tensor t = Tensor::from_data({1, T}, input);
    Tensor base = encode_tags(mlp, t);

    std::vector<std::int64_t> perm = {3, 0, 5, 1, 4, 2};
    // Tensors share storage across copies, so build an independent MLP and
    // copy the parameters over explicitly.
    Rng rng2(6);
    TextualMLP permuted(T, W, D, rng2);
    permuted.fc1.bias.data() = mlp.fc1.bias.data();
    permuted.fc2.weight.data() = mlp.fc2.weight.data();
    permuted.fc2.bias.data() = mlp.fc2.bias.data();
    permuted.fc3.weight.data() = mlp.fc3.weight.data();
    permuted.fc3.bias.data() = mlp.fc3.bias.data();
    std::vector<double> permuted_input(static_cast<std::size_t>(T));
    for (std::int64_t i = 0; i < T; ++i) {
        permuted_input[static_cast<std::size_t>(i)] = input[static_cast<std::size_t>(perm[i])];
        for (std::int64_t e = 0; e < W; ++e)
            permuted.fc1.weight.data()[i * W + e] = mlp.fc1.weight.data()[perm[i] * W + e];
    }
    Tensor got = encode_tags(permuted, Tensor::from_data({1, T}, permuted_input));
    for (std::size_t i = 0; i < base.data().size(); ++i)
        EXPECT_DOUBLE_EQ(got.data()[i], base.data()[i]);
}

TEST(EncodeTags, DenseTagVectorsStayFinite) {
    Rng rng(6);
    TextualMLP mlp(32, 16, 8, rng);
    Tensor all_ones = Tensor::filled({4, 32}, 1.0);
    Tensor f = encode_tags(mlp, all_ones);
    for (double v : f.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(JointFeature, ConcatenatesVisualFirst) {
    Tensor f_v = Tensor::from_data({1, 2}, {1, 2});
    Tensor f_t = Tensor::from_data({1, 2}, {3, 4});
    Tensor f = joint_feature(f_v, f_t);
    EXPECT_EQ(f.data(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(JointFeature, ZeroTextHalfSupportsTagAblation) {
    Rng rng(7);
    Tensor f_v = Tensor::randn({2, 3}, rng);
    Tensor f_t = Tensor::zeros({2, 3});
    Tensor f = joint_feature(f_v, f_t);
    for (std::int64_t r = 0; r < 2; ++r)
        for (std::int64_t j = 0; j < 3; ++j)
            EXPECT_DOUBLE_EQ(f.data()[static_cast<std::size_t>(r * 6 + 3 + j)], 0.0);
}

TEST(JointFeature, ShapesAndRecovery) {
    Rng rng(8);
    Tensor f_v = Tensor::randn({2, 128}, rng);
    Tensor f_t = Tensor::randn({2, 128}, rng);
    Tensor f = joint_feature(f_v, f_t);
    EXPECT_EQ(f.shape(), (Shape{2, 256}));
    // Halves are independently recoverable by slicing at D_v.
    for (std::int64_t r = 0; r < 2; ++r)
        for (std::int64_t j = 0; j < 128; ++j) {
            EXPECT_DOUBLE_EQ(f.data()[static_cast<std::size_t>(r * 256 + j)],
                             f_v.data()[static_cast<std::size_t>(r * 128 + j)]);
            EXPECT_DOUBLE_EQ(f.data()[static_cast<std::size_t>(r * 256 + 128 + j)],
                             f_t.data()[static_cast<std::size_t>(r * 128 + j)]);
        }
}

TEST(JointFeature, DimensionMismatchFails) {
    EXPECT_THROW(joint_feature(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
    EXPECT_THROW(joint_feature(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), DimensionError);
}
