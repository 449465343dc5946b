#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "maekit/ops.hpp"
#include "maekit/patchwork.hpp"

using namespace maekit;

TEST(Patchify, LayoutIsGridRowMajor) {
    std::vector<float> px(16);
    for (std::size_t i = 0; i < 16; ++i) px[i] = static_cast<float>(i);
    const Tensor<float> img({1, 4, 4}, px);
    const auto p = patchify(img, PatchConfig{4, 2});
    ASSERT_EQ(p.shape(), (Shape{4, 4}));
    EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().begin() + 4), (std::vector<float>{0, 1, 4, 5}));
    EXPECT_EQ(std::vector<float>(p.data().begin() + 4, p.data().begin() + 8), (std::vector<float>{2, 3, 6, 7}));
    EXPECT_EQ(p.data()[15], 15.0f);
}

TEST(Patchify, ViTGeometry) {
    const PatchConfig cfg{224, 16};
    EXPECT_EQ(cfg.num_patches(), 196u);
    EXPECT_EQ(cfg.patch_dim(), 256u);
    EXPECT_EQ(patchify(Tensor<float>::zeros({1, 224, 224}), cfg).shape(), (Shape{196, 256}));
}

TEST(Patchify, RoundTripIsBitExact) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const PatchConfig cfg = trial % 2 ? PatchConfig{64, 16} : PatchConfig{12, 4};
        std::vector<float> px(cfg.image_size * cfg.image_size);
        for (auto& v : px) v = static_cast<float>(rng.uniform());
        const Tensor<float> img({1, cfg.image_size, cfg.image_size}, px);
        const auto back = unpatchify(patchify(img, cfg), cfg);
        ASSERT_TRUE(std::equal(back.data().begin(), back.data().end(), px.begin()));
    }
}

TEST(Patchify, SizeMismatchIsConfigError) {
    EXPECT_THROW(patchify(Tensor<float>::zeros({1, 8, 8}), PatchConfig{16, 4}), ConfigError);
    EXPECT_THROW(patchify(Tensor<float>::zeros({1, 10, 10}), PatchConfig{10, 3}), ConfigError);
}

TEST(MaskPlan, KeepCountArithmetic) {
    EXPECT_EQ(keep_count_for(196, 0.75), 49u);
    EXPECT_EQ(keep_count_for(16, 0.75), 4u);
    EXPECT_EQ(keep_count_for(10, 0.33), 6u);
    EXPECT_EQ(keep_count_for(7, 0.0), 7u);
    Rng rng(1);
    const auto plan = make_mask_plan(196, 0.75, rng);
    EXPECT_EQ(plan.keep_count, 49u);
    EXPECT_EQ(plan.masked_count(), 147u);
}

TEST(MaskPlan, RatioZeroMasksNothing) {
    Rng rng(2);
    const auto plan = make_mask_plan(9, 0.0, rng);
    EXPECT_EQ(plan.keep_count, 9u);
    EXPECT_TRUE(std::all_of(plan.mask_flags.begin(), plan.mask_flags.end(), [](auto f) { return f == 0; }));
}

TEST(MaskPlan, RejectsBadRatio) {
    Rng rng(2);
    EXPECT_THROW(make_mask_plan(9, 1.0, rng), ConfigError);
    EXPECT_THROW(make_mask_plan(9, -0.1, rng), ConfigError);
}

TEST(MaskPlan, InvariantsOverRandomDraws) {
    Rng draw(11), rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + draw.below(300);
        const double r = draw.uniform() * 0.99;
        const auto plan = make_mask_plan(n, r, rng);
        ASSERT_EQ(plan.keep_count, static_cast<std::size_t>(std::floor(n * (1 - r) + 1e-9)));
        std::vector<std::size_t> all(plan.visible().begin(), plan.visible().end());
        all.insert(all.end(), plan.masked().begin(), plan.masked().end());
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(all[i], i);
        for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(plan.shuffle_idx[plan.restore_idx[i]], i);
        for (auto i : plan.masked()) ASSERT_EQ(plan.mask_flags[i], 1);
    }
}

TEST(MaskPlan, GatherThenRestoreIsIdentity) {
    Rng rng(4);
    const auto plan = make_mask_plan(16, 0.5, rng);
    std::vector<double> v(16 * 3);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    const Tensor<double> x({16, 3}, v);
    const auto shuffled = gather_rows(x, std::span<const std::size_t>(plan.shuffle_idx));
    const auto back = gather_rows(shuffled, std::span<const std::size_t>(plan.restore_idx));
    EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), v.begin()));
}

TEST(MaskPlan, MonteCarloUniformity) {
    Rng rng(2024);
    std::vector<int> masked(8, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const auto plan = make_mask_plan(8, 0.5, rng);
        for (std::size_t k = 0; k < 8; ++k) masked[k] += plan.mask_flags[k];
    }
    for (int m : masked) EXPECT_NEAR(static_cast<double>(m) / draws, 0.5, 0.02);
}

TEST(MaskPlan, SameSeedSamePlan) {
    Rng a(9), b(9);
    EXPECT_EQ(make_mask_plan(50, 0.75, a).shuffle_idx, make_mask_plan(50, 0.75, b).shuffle_idx);
}

TEST(PositionalEmbedding, MatchesFormulaAndIsDistinct) {
    const auto pe = positional_embedding<double>(196, 64);
    ASSERT_EQ(pe.shape(), (Shape{196, 64}));
    // Row 15 sits at grid (1, 1); column 16 + 3 is cos(row * 10000^(-3/16)).
    EXPECT_NEAR(pe.data()[15 * 64 + 16 + 3], std::cos(1.0 * std::pow(10000.0, -3.0 / 16)), 1e-15);
    EXPECT_NEAR(pe.data()[15 * 64 + 32 + 0], std::sin(1.0), 1e-15);
    std::set<std::vector<double>> rows;
    for (std::size_t k = 0; k < 196; ++k) rows.insert(std::vector<double>(pe.data().begin() + k * 64, pe.data().begin() + (k + 1) * 64));
    EXPECT_EQ(rows.size(), 196u);
    EXPECT_TRUE(std::all_of(pe.data().begin(), pe.data().end(), [](double v) { return std::abs(v) <= 1.0; }));
    const auto again = positional_embedding<double>(196, 64);
    EXPECT_TRUE(std::equal(pe.data().begin(), pe.data().end(), again.data().begin()));
}

TEST(PositionalEmbedding, RejectsBadShapes) {
    EXPECT_THROW(positional_embedding<float>(16, 6), ConfigError);
    EXPECT_THROW(positional_embedding<float>(15, 8), ConfigError);
}

TEST(NormalizeTargets, ReferenceCases) {
    const auto c = normalize_patch_targets(Tensor<double>({1, 4}, {5, 5, 5, 5}));
    for (double v : c.data()) EXPECT_EQ(v, 0.0);
    // 0.37 is not representable, so a summed mean would not cancel exactly.
    const auto odd = normalize_patch_targets(Tensor<float>::full({3, 256}, 0.37f));
    for (float v : odd.data()) EXPECT_EQ(v, 0.0f);
    const auto two = normalize_patch_targets(Tensor<double>({1, 2}, {0, 2}), 0.0);
    EXPECT_EQ(two.data()[0], -1.0);
    EXPECT_EQ(two.data()[1], 1.0);
}

TEST(NormalizeTargets, RandomRowsAreStandardized) {
    Rng rng(8);
    std::vector<float> v(200 * 16);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    const auto out = normalize_patch_targets(Tensor<float>({200, 16}, v));
    for (std::size_t r = 0; r < 200; ++r) {
        double mu = 0, var = 0;
        for (std::size_t c = 0; c < 16; ++c) mu += out.data()[r * 16 + c];
        mu /= 16;
        for (std::size_t c = 0; c < 16; ++c) var += std::pow(out.data()[r * 16 + c] - mu, 2);
        EXPECT_LT(std::abs(mu), 1e-6);
        EXPECT_LT(std::abs(var / 16 - 1), 1e-4);
    }
}
