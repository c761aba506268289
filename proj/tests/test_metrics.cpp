#include <gtest/gtest.h>

#include "msann/metrics.hpp"
#include "msann/rng.hpp"

using namespace msann;

namespace {

// The worked 2-image fixture: truth {0},{0,1}; predicted {0,1},{1}.
CountTable fixture_table() {
    return tally({{0, 1}, {1}}, {{0}, {0, 1}}, 2);
}

// Brute-force recomputation straight from the metric definitions, sharing no
// code with compute_metrics.
MetricsReport brute_force_metrics(const LabelSets& pred, const LabelSets& truth, std::int64_t C) {
    const auto N = static_cast<std::int64_t>(pred.size());
    double cp = 0.0, cr = 0.0;
    for (std::int64_t j = 0; j < C; ++j) {
        std::int64_t correct = 0, predicted = 0, gt = 0;
        for (std::int64_t i = 0; i < N; ++i) {
            const bool p = std::count(pred[i].begin(), pred[i].end(), j) > 0;
            const bool g = std::count(truth[i].begin(), truth[i].end(), j) > 0;
            predicted += p;
            gt += g;
            correct += p && g;
        }
        if (predicted > 0) cp += double(correct) / double(predicted);
        if (gt > 0) cr += double(correct) / double(gt);
    }
    cp /= double(C);
    cr /= double(C);
    std::int64_t sum_c = 0, sum_p = 0, sum_g = 0;
    for (std::int64_t i = 0; i < N; ++i) {
        for (auto j : pred[i])
            sum_c += std::count(truth[i].begin(), truth[i].end(), j) > 0;
        sum_p += static_cast<std::int64_t>(pred[i].size());
        sum_g += static_cast<std::int64_t>(truth[i].size());
    }
    MetricsReport r;
    r.c_p = 100.0 * cp;
    r.c_r = 100.0 * cr;
    r.c_f1 = harmonic_f1(r.c_p, r.c_r);
    r.i_p = sum_p > 0 ? 100.0 * double(sum_c) / double(sum_p) : 0.0;
    r.i_r = sum_g > 0 ? 100.0 * double(sum_c) / double(sum_g) : 0.0;
    r.i_f1 = harmonic_f1(r.i_p, r.i_r);
    r.h_f1 = harmonic_f1(r.c_f1, r.i_f1);
    return r;
}

LabelSets random_sets(Rng& rng, std::int64_t n, std::int64_t C, bool allow_empty) {
    LabelSets sets(static_cast<std::size_t>(n));
    for (auto& s : sets) {
        const std::int64_t lo = allow_empty ? 0 : 1;
        const auto count = rng.uniform_int(lo, C);
        std::vector<std::int64_t> pool;
        for (std::int64_t j = 0; j < C; ++j) pool.push_back(j);
        rng.shuffle(pool);
        s.assign(pool.begin(), pool.begin() + count);
    }
    return sets;
}

}  // namespace

TEST(Tally, PerfectPredictionsMatchAllCounts) {
    LabelSets truth = {{0, 2}, {1}, {0, 1, 2}};
    CountTable t = tally(truth, truth, 3);
    for (std::int64_t j = 0; j < 3; ++j) {
        EXPECT_EQ(t.ni_correct[j], t.ni_predicted[j]);
        EXPECT_EQ(t.ni_correct[j], t.ni_truth[j]);
    }
}

TEST(Tally, TwoImageFixtureCounts) {
    CountTable t = fixture_table();
    EXPECT_EQ(t.ni_correct, (std::vector<std::int64_t>{1, 1}));
    EXPECT_EQ(t.ni_predicted, (std::vector<std::int64_t>{1, 2}));
    EXPECT_EQ(t.ni_truth, (std::vector<std::int64_t>{2, 1}));
    EXPECT_EQ(t.nl_correct, (std::vector<std::int64_t>{1, 1}));
    EXPECT_EQ(t.nl_predicted, (std::vector<std::int64_t>{2, 1}));
    EXPECT_EQ(t.nl_truth, (std::vector<std::int64_t>{1, 2}));
}

TEST(Tally, EmptyPredictionContributesZero) {
    CountTable t = tally({{}}, {{0}}, 2);
    EXPECT_EQ(t.nl_predicted[0], 0);
    EXPECT_EQ(t.nl_correct[0], 0);
    EXPECT_EQ(t.ni_predicted, (std::vector<std::int64_t>{0, 0}));
}

TEST(Tally, OutOfRangeLabelFails) {
    EXPECT_THROW(tally({{2}}, {{0}}, 2), DimensionError);
    EXPECT_THROW(tally({{0}}, {{-1}}, 2), DimensionError);
    EXPECT_THROW(tally({{0}, {1}}, {{0}}, 2), DimensionError);
}

TEST(Tally, CrossSumInvariantsHold) {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t C = rng.uniform_int(1, 5);
        LabelSets pred = random_sets(rng, rng.uniform_int(1, 8), C, true);
        LabelSets truth = random_sets(rng, static_cast<std::int64_t>(pred.size()), C, false);
        CountTable t = tally(pred, truth, C);
        std::int64_t nic = 0, nip = 0, nig = 0, nlc = 0, nlp = 0, nlg = 0;
        for (std::int64_t j = 0; j < C; ++j) nic += t.ni_correct[j], nip += t.ni_predicted[j], nig += t.ni_truth[j];
        for (std::size_t i = 0; i < t.nl_correct.size(); ++i)
            nlc += t.nl_correct[i], nlp += t.nl_predicted[i], nlg += t.nl_truth[i];
        EXPECT_EQ(nic, nlc);
        EXPECT_EQ(nip, nlp);
        EXPECT_EQ(nig, nlg);
    }
}

TEST(ComputeMetrics, ReproducesPublishedHarmonicF1) {
    EXPECT_NEAR(harmonic_f1(69.29, 80.49), 74.47, 0.01);
    EXPECT_NEAR(harmonic_f1(66.36, 77.15), 71.35, 0.01);
    EXPECT_NEAR(harmonic_f1(69.57, 73.17), 71.32, 0.01);
    EXPECT_NEAR(harmonic_f1(67.00, 75.16), 70.84, 0.01);
}

TEST(ComputeMetrics, TwoImageFixtureScores) {
    MetricsReport r = compute_metrics(fixture_table());
    EXPECT_NEAR(r.c_p, 75.0, 1e-9);
    EXPECT_NEAR(r.c_r, 75.0, 1e-9);
    EXPECT_NEAR(r.c_f1, 75.0, 1e-9);
    EXPECT_NEAR(r.i_p, 100.0 * 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(r.i_r, 100.0 * 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(r.i_f1, 100.0 * 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(r.h_f1, 70.588, 0.001);
}

TEST(ComputeMetrics, AllZeroTableWarns) {
    CountTable t;
    t.C = 3;
    t.N = 0;
    t.ni_correct.assign(3, 0);
    t.ni_predicted.assign(3, 0);
    t.ni_truth.assign(3, 0);
    MetricsReport r = compute_metrics(t);
    EXPECT_TRUE(r.all_zero_warning);
    EXPECT_EQ(r.h_f1, 0.0);
}

TEST(ComputeMetrics, MatchesBruteForceOn200RandomInstances) {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t C = rng.uniform_int(1, 5);
        const std::int64_t N = rng.uniform_int(1, 10);
        LabelSets pred = random_sets(rng, N, C, true);
        LabelSets truth = random_sets(rng, N, C, false);
        MetricsReport got = compute_metrics(tally(pred, truth, C));
        MetricsReport ref = brute_force_metrics(pred, truth, C);
        EXPECT_DOUBLE_EQ(got.c_p, ref.c_p);
        EXPECT_DOUBLE_EQ(got.c_r, ref.c_r);
        EXPECT_DOUBLE_EQ(got.c_f1, ref.c_f1);
        EXPECT_DOUBLE_EQ(got.i_p, ref.i_p);
        EXPECT_DOUBLE_EQ(got.i_r, ref.i_r);
        EXPECT_DOUBLE_EQ(got.i_f1, ref.i_f1);
        EXPECT_DOUBLE_EQ(got.h_f1, ref.h_f1);
    }
}

// If every image's predicted label count equals its true count, then
// I-P == I-R == I-F1 exactly.
TEST(ComputeMetrics, GroundTruthQuantityIdentity) {
    Rng rng(55);
    for (int trial = 0; trial < 30; ++trial) {
        const std::int64_t C = 5;
        LabelSets truth = random_sets(rng, 8, C, false);
        LabelSets pred(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i) {
            std::vector<std::int64_t> pool;
            for (std::int64_t j = 0; j < C; ++j) pool.push_back(j);
            rng.shuffle(pool);
            pred[i].assign(pool.begin(), pool.begin() + truth[i].size());
        }
        MetricsReport r = compute_metrics(tally(pred, truth, C));
        EXPECT_DOUBLE_EQ(r.i_p, r.i_r);
        EXPECT_DOUBLE_EQ(r.i_p, r.i_f1);
    }
}

TEST(ComputeMetrics, HarmonicMeanBounds) {
    Rng rng(66);
    for (int trial = 0; trial < 50; ++trial) {
        LabelSets pred = random_sets(rng, 6, 4, true);
        LabelSets truth = random_sets(rng, 6, 4, false);
        MetricsReport r = compute_metrics(tally(pred, truth, 4));
        EXPECT_LE(std::min(r.c_f1, r.i_f1), r.h_f1 + 1e-12);
        EXPECT_GE(std::max(r.c_f1, r.i_f1), r.h_f1 - 1e-12);
    }
}

// Adding one correct label to a prediction never decreases NL_i^c, I-R or C-R.
TEST(ComputeMetrics, AddingCorrectLabelIsMonotone) {
    Rng rng(88);
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t C = 5;
        LabelSets truth = random_sets(rng, 6, C, false);
        LabelSets pred = random_sets(rng, 6, C, true);
        // Find an image with a missing correct label.
        for (std::size_t i = 0; i < truth.size(); ++i) {
            for (auto j : truth[i]) {
                if (std::count(pred[i].begin(), pred[i].end(), j)) continue;
                CountTable before = tally(pred, truth, C);
                MetricsReport rb = compute_metrics(before);
                LabelSets pred2 = pred;
                pred2[i].push_back(j);
                CountTable after = tally(pred2, truth, C);
                MetricsReport ra = compute_metrics(after);
                EXPECT_GE(after.nl_correct[i], before.nl_correct[i]);
                EXPECT_GE(ra.i_r, rb.i_r);
                EXPECT_GE(ra.c_r, rb.c_r);
                goto next_trial;
            }
        }
    next_trial:;
    }
}

TEST(LqpQuality, ExactPredictionsScorePerfectly) {
    auto [acc, mse] = lqp_quality({1, 2, 3}, {1, 2, 3}, 6);
    EXPECT_DOUBLE_EQ(acc, 100.0);
    EXPECT_DOUBLE_EQ(mse, 0.0);
}

TEST(LqpQuality, RoundingAndRawMse) {
    auto [acc, mse] = lqp_quality({1.2}, {1.0}, 6);
    EXPECT_DOUBLE_EQ(acc, 100.0);  // 1.2 rounds to 1
    EXPECT_NEAR(mse, 0.04, 1e-12);
}

TEST(LqpQuality, ClampsIntoValidRange) {
    auto [acc, mse] = lqp_quality({0.2, 9.7}, {1.0, 6.0}, 6);
    EXPECT_DOUBLE_EQ(acc, 100.0);  // 0.2 -> clamp(0)=1, 9.7 -> clamp(10)=6
    (void)mse;
}

TEST(LqpQuality, MatchesDirectFormulaOracle) {
    Rng rng(99);
    std::vector<double> m_hat(20), m(20);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = static_cast<double>(rng.uniform_int(1, 6));
        m_hat[i] = m[i] + rng.normal(0.0, 1.0);
    }
    auto [acc, mse] = lqp_quality(m_hat, m, 6);
    std::int64_t hits = 0;
    double se = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        double q = std::round(m_hat[i]);
        q = std::min(6.0, std::max(1.0, q));
        if (q == m[i]) ++hits;
        se += (m_hat[i] - m[i]) * (m_hat[i] - m[i]);
    }
    EXPECT_DOUBLE_EQ(acc, 100.0 * hits / 20.0);
    EXPECT_DOUBLE_EQ(mse, se / 20.0);
}

TEST(ReportRender, GoldenRows) {
    // Fixture 1: the worked 2-image example.
    MetricsReport fixture = compute_metrics(fixture_table());
    EXPECT_EQ(render_csv_row("fixture", fixture),
              "fixture,75.00,75.00,75.00,66.67,66.67,66.67,70.59,,");

    // Fixture 2: report with LQP quality attached.
    MetricsReport with_lqp = fixture;
    auto [acc, mse] = lqp_quality({1.2, 2.4}, {1.0, 2.0}, 6);
    with_lqp.lqp_accuracy = acc;
    with_lqp.lqp_mse = mse;
    EXPECT_EQ(render_csv_row("with_lqp", with_lqp),
              "with_lqp,75.00,75.00,75.00,66.67,66.67,66.67,70.59,100.00,0.100");

    // Fixture 3: a perfect run renders as all hundreds.
    MetricsReport perfect = compute_metrics(tally({{0}, {1}}, {{0}, {1}}, 2));
    EXPECT_EQ(render_csv_row("perfect", perfect),
              "perfect,100.00,100.00,100.00,100.00,100.00,100.00,100.00,,");

    const std::string csv = report_render({{"fixture", fixture}, {"perfect", perfect}});
    EXPECT_EQ(csv,
              "model,C-P,C-R,C-F1,I-P,I-R,I-F1,H-F1,LQP-Acc,LQP-MSE\n"
              "fixture,75.00,75.00,75.00,66.67,66.67,66.67,70.59,,\n"
              "perfect,100.00,100.00,100.00,100.00,100.00,100.00,100.00,,\n");
}

TEST(PredictionFiles, RoundTripWithAndWithoutQuantities) {
    PredictionRecords records;
    records.ids = {"img0", "img1", "img2"};
    records.label_sets = {{0, 3}, {}, {2}};
    records.m_hat = {2.25, 0.5, 1.0};
    const std::string path = testing::TempDir() + "preds_roundtrip.tsv";
    save_predictions(path, records);
    PredictionRecords loaded = load_predictions(path);
    EXPECT_EQ(loaded.ids, records.ids);
    EXPECT_EQ(loaded.label_sets, records.label_sets);
    ASSERT_EQ(loaded.m_hat.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(loaded.m_hat[i], records.m_hat[i], 1e-6);

    records.m_hat.clear();
    save_predictions(path, records);
    loaded = load_predictions(path);
    EXPECT_TRUE(loaded.m_hat.empty());
    EXPECT_EQ(loaded.label_sets, records.label_sets);
}

TEST(PredictionFiles, MalformedLineFails) {
    const std::string path = testing::TempDir() + "preds_bad.tsv";
    {
        std::ofstream out(path);
        out << "img0\t0,1\t2.5\textra\n";
    }
    EXPECT_THROW(load_predictions(path), IoError);
}
