#include <gtest/gtest.h>

#include <algorithm>

#include "maekit/metrics.hpp"
#include "maekit/rng.hpp"

using namespace maekit;

TEST(FScore, ReferenceValues) {
    EXPECT_EQ(f_score({1, 0, 0, 0}), 1.0);
    EXPECT_EQ(f_score({0, 3, 2, 5}), 0.0);
    EXPECT_EQ(f_score({0, 0, 0, 9}), 0.0);
    EXPECT_NEAR(f_score({2, 1, 1, 0}), 2.0 / 3.0, 1e-15);
}

TEST(FScore, ExhaustiveRationalAgreement) {
    for (std::size_t tp = 0; tp <= 10; ++tp)
        for (std::size_t fp = 0; fp <= 10; ++fp)
            for (std::size_t fn = 0; fn <= 10; ++fn) {
                const double f = f_score({tp, fp, fn, 0});
                const std::size_t num = 2 * tp, den = 2 * tp + fp + fn;
                if (den == 0) {
                    EXPECT_EQ(f, 0.0);
                    continue;
                }
                // f == num / den  <=>  f * den == num, checked in extended precision.
                EXPECT_NEAR(static_cast<long double>(f) * den, static_cast<long double>(num), 1e-12L);
                EXPECT_EQ(f, f_score({tp, fn, fp, 0}));
                if (tp < 10) EXPECT_LE(f, f_score({tp + 1, fp, fn, 0}));
            }
}

TEST(Accuracy, MatchesCountingOracle) {
    const std::vector<int> a{0, 1, 2}, b{1, 0, 2};
    EXPECT_EQ(accuracy(std::span<const int>(a), std::span<const int>(a)), 1.0);
    const std::vector<int> p{0, 1}, q{1, 0};
    EXPECT_EQ(accuracy(std::span<const int>(p), std::span<const int>(q)), 0.0);
    Rng rng(3);
    std::vector<int> preds(1000), labels(1000);
    int correct = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        preds[i] = static_cast<int>(rng.below(4));
        labels[i] = static_cast<int>(rng.below(4));
        correct += preds[i] == labels[i];
    }
    EXPECT_EQ(accuracy(std::span<const int>(preds), std::span<const int>(labels)), correct / 1000.0);
    std::reverse(preds.begin(), preds.end());
    std::reverse(labels.begin(), labels.end());
    EXPECT_EQ(accuracy(std::span<const int>(preds), std::span<const int>(labels)), correct / 1000.0);
    const std::vector<int> none;
    EXPECT_THROW(accuracy(std::span<const int>(none), std::span<const int>(none)), ContractError);
    EXPECT_THROW(accuracy(std::span<const int>(a), std::span<const int>(p)), ContractError);
}

TEST(Argmax, TiesGoToLowestIndex) {
    const Tensor<float> s({3, 3}, {1, 3, 3, 2, 2, 2, 0, -1, 5});
    EXPECT_EQ(argmax_rows(s), (std::vector<int>{1, 0, 2}));
}

TEST(Confusion, ReferenceCases) {
    const auto ones = Tensor<float>::full({1, 64, 64}, 1.0f), zeros = Tensor<float>::zeros({1, 64, 64});
    const auto c = segmentation_confusion(ones, zeros);
    EXPECT_EQ(c.fp, 4096u);
    EXPECT_EQ(c.tp, 0u);
    const auto same = segmentation_confusion(ones, ones);
    EXPECT_EQ(same.fp + same.fn, 0u);
    EXPECT_THROW(segmentation_confusion(Tensor<float>::full({2}, 0.5f), Tensor<float>::zeros({2})), ContractError);
    EXPECT_THROW(segmentation_confusion(ones, Tensor<float>::zeros({1, 64, 63})), ContractError);
}

TEST(Confusion, MatchesBruteForceLoop) {
    Rng rng(9);
    const std::size_t n = 8 * 1 * 12 * 12;
    std::vector<float> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
        t[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    }
    ConfusionCounts want;
    for (std::size_t i = 0; i < n; ++i) {
        if (p[i] == 1 && t[i] == 1) ++want.tp;
        if (p[i] == 1 && t[i] == 0) ++want.fp;
        if (p[i] == 0 && t[i] == 1) ++want.fn;
        if (p[i] == 0 && t[i] == 0) ++want.tn;
    }
    const auto got = segmentation_confusion(Tensor<float>({8, 1, 12, 12}, p), Tensor<float>({8, 1, 12, 12}, t));
    EXPECT_EQ(got, want);
    EXPECT_EQ(got.tp + got.fp + got.fn + got.tn, n);
}

TEST(Confusion, MeanImageFScoreAveragesPerImage) {
    // Image 0 perfect (f = 1), image 1 all wrong (f = 0).
    const Tensor<float> pred({2, 1, 1, 2}, {1, 0, 1, 0});
    const Tensor<float> truth({2, 1, 1, 2}, {1, 0, 0, 1});
    EXPECT_DOUBLE_EQ(mean_image_f_score(pred, truth), 0.5);
}

TEST(Report, SixDecimalTabSeparated) {
    EXPECT_EQ(format_metrics({{"test_accuracy", 0.98}, {"f", 2.0 / 3.0}}), "test_accuracy\t0.980000\nf\t0.666667\n");
}
