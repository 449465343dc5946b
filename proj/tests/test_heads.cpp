#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "maekit/gradcheck_suite.hpp"
#include "maekit/heads.hpp"

using namespace maekit;
namespace fs = std::filesystem;

namespace {

ArchConfig small(std::size_t image, std::size_t patch) {
    ArchConfig c;
    c.patch = {image, patch};
    c.enc_dim = 8;
    c.enc_depth = 1;
    c.enc_heads = 2;
    c.dec_dim = 8;
    c.dec_depth = 1;
    c.dec_heads = 2;
    return c;
}

Tensor<float> random_images(std::size_t b, std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(b * size * size);
    for (auto& x : v) x = static_cast<float>(rng.uniform(0.0, 1.0));
    return Tensor<float>({b, 1, size, size}, std::move(v));
}

template <typename T>
std::vector<T> vec(const Tensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("maekit_heads_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(TrainMode, Parse) {
    EXPECT_EQ(parse_train_mode("linear"), TrainMode::linear_probe);
    EXPECT_EQ(parse_train_mode("full_finetune"), TrainMode::full_finetune);
    EXPECT_THROW(parse_train_mode("partial"), ConfigError);
}

TEST(ClassifyHead, RowsAreDistributions) {
    const auto model = init_params<float>(small(16, 4), 1);
    const auto head = init_linear_head<float>(8, 3, 2);
    const auto probs = classify_forward(random_images(4, 16, 3), model, head);
    ASSERT_EQ(probs.shape(), (Shape{4, 3}));
    for (std::size_t b = 0; b < 4; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            EXPECT_GT(probs.data()[b * probs.dim(1) + k], 0.0f);
            s += probs.data()[b * probs.dim(1) + k];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(ClassifyHead, ZeroWeightsGiveUniform) {
    const auto model = init_params<float>(small(16, 4), 1);
    auto head = init_linear_head<float>(8, 4, 2);
    head.weight = Tensor<float>::zeros({8, 4}, true);
    const auto probs = classify_forward(random_images(2, 16, 3), model, head);
    for (float p : probs.data()) EXPECT_NEAR(p, 0.25, 1e-7);
}

TEST(ClassifyHead, IdenticalImagesIdenticalRows) {
    const auto model = init_params<float>(small(16, 4), 1);
    const auto head = init_linear_head<float>(8, 2, 2);
    const auto one = random_images(1, 16, 5);
    const auto probs = classify_forward(stack(std::vector<Tensor<float>>{select(one, 0), select(one, 0)}), model, head);
    EXPECT_EQ(probs.data()[0 * probs.dim(1) + 0], probs.data()[1 * probs.dim(1) + 0]);
    EXPECT_EQ(probs.data()[0 * probs.dim(1) + 1], probs.data()[1 * probs.dim(1) + 1]);
}

TEST(ClassifyHead, BiasShiftInvariance) {
    const auto model = init_params<double>(small(16, 4), 1);
    auto head = init_linear_head<double>(8, 3, 2);
    Rng rng(4);
    const auto images = detail::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    const auto p0 = classify_forward(images, model, head);
    head.bias = Tensor<double>({3}, {5.0, 5.0, 5.0}, true);
    const auto p1 = classify_forward(images, model, head);
    for (std::size_t i = 0; i < p0.numel(); ++i) EXPECT_NEAR(p0.data()[i], p1.data()[i], 1e-12);
}

TEST(ClassifyHead, Errors) {
    EXPECT_THROW(init_linear_head<float>(8, 1, 0), ConfigError);
    const auto model = init_params<float>(small(16, 4), 1);
    EXPECT_THROW(classify_forward(random_images(1, 16, 1), model, init_linear_head<float>(16, 2, 0)), ConfigError);

    auto m = model;
    auto head = init_linear_head<float>(8, 2, 0);
    const auto images = random_images(2, 16, 1);
    const std::vector<int> bad{0, 2};
    EXPECT_THROW(train_head(m, head, images, std::span<const int>(bad), TrainMode::linear_probe, OptimConfig::head(1)),
                 ConfigError);
    const std::vector<int> short_labels{0};
    EXPECT_THROW(train_head(m, head, images, std::span<const int>(short_labels), TrainMode::linear_probe,
                            OptimConfig::head(1)),
                 ConfigError);
}

TEST(ClassifyHead, UniformCrossEntropyIsLogK) {
    for (std::size_t k : {2u, 3u, 10u}) {
        const auto logits = Tensor<double>::zeros({4, k});
        const std::vector<int> labels{0, 1, 1, 0};
        EXPECT_NEAR(softmax_cross_entropy(logits, std::span<const int>(labels)).item(),
                    std::log(static_cast<double>(k)), 1e-6);
    }
}

TEST(SegmentHead, OutputGeometry) {
    const auto model = init_params<float>(small(64, 16), 1);
    const auto head = init_segmentation_head<float>(8, 2);
    const auto probs = segment_forward(random_images(2, 64, 3), model, head);
    ASSERT_EQ(probs.shape(), (Shape{2, 1, 64, 64}));
    for (float p : probs.data()) {
        EXPECT_GT(p, 0.0f);
        EXPECT_LT(p, 1.0f);
    }
}

TEST(SegmentHead, FullSizeGeometry) {
    const auto model = init_params<float>(small(224, 16), 1);
    const auto head = init_segmentation_head<float>(8, 2);
    NoGradGuard guard;
    const auto probs = segment_forward(random_images(1, 224, 3), model, head);
    EXPECT_EQ(probs.shape(), (Shape{1, 1, 224, 224}));
}

TEST(SegmentHead, RequiresPatch16) {
    const auto model = init_params<float>(small(16, 4), 1);
    const auto head = init_segmentation_head<float>(8, 2);
    EXPECT_THROW(segment_forward(random_images(1, 16, 3), model, head), UnsupportedConfigError);
    auto m = model;
    auto h = head;
    const auto images = random_images(1, 16, 3);
    EXPECT_THROW(train_head(m, h, images, images, TrainMode::linear_probe, OptimConfig::head(1)),
                 UnsupportedConfigError);
}

TEST(SegmentHead, MaskShapeMismatch) {
    auto model = init_params<float>(small(64, 16), 1);
    auto head = init_segmentation_head<float>(8, 2);
    EXPECT_THROW(train_head(model, head, random_images(2, 64, 1), random_images(1, 64, 1), TrainMode::linear_probe,
                            OptimConfig::head(1)),
                 ConfigError);
}

TEST(Binarize, Threshold) {
    const Tensor<float> p({5}, {0.9f, 0.5f, 0.49999f, 0.0f, 1.0f});
    const auto b = binarize_mask(p);
    EXPECT_EQ(vec(b), (std::vector<float>{1, 1, 0, 0, 1}));
    EXPECT_THROW(binarize_mask(p, 1.0), ConfigError);
    EXPECT_THROW(binarize_mask(p, 0.0), ConfigError);
}

TEST(Binarize, Idempotent) {
    const auto p = random_images(1, 16, 9);
    const auto b = binarize_mask(p);
    std::vector<float> nudged(b.numel());
    for (std::size_t i = 0; i < nudged.size(); ++i) nudged[i] = b.data()[i] * 0.99f + 0.005f;
    EXPECT_EQ(vec(binarize_mask(Tensor<float>(b.shape(), std::move(nudged)))), vec(b));
}

TEST(TrainHead, LinearProbeLeavesEncoderUntouched) {
    auto model = init_params<float>(small(16, 4), 1);
    auto head = init_linear_head<float>(8, 2, 2);
    const auto before = backbone_checksum(model);
    const auto images = random_images(6, 16, 3);
    const std::vector<int> labels{0, 1, 0, 1, 1, 0};
    auto opts = OptimConfig::head(3);
    opts.batch_size = 4;
    opts.base_lr = 1e-2;
    const auto w0 = vec(head.weight);
    const auto r = train_head(model, head, images, std::span<const int>(labels), TrainMode::linear_probe, opts);
    EXPECT_EQ(backbone_checksum(model), before);
    EXPECT_NE(vec(head.weight), w0);
    EXPECT_EQ(r.loss_history.size(), 3u);
    EXPECT_EQ(r.metric_history.size(), 3u);
    for (double a : r.metric_history) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(TrainHead, FullFinetuneChangesEncoder) {
    auto model = init_params<float>(small(16, 4), 1);
    auto head = init_linear_head<float>(8, 2, 2);
    const auto before = backbone_checksum(model);
    const auto images = random_images(4, 16, 3);
    const std::vector<int> labels{0, 1, 0, 1};
    auto opts = OptimConfig::head(1);
    opts.base_lr = 1e-2;
    train_head(model, head, images, std::span<const int>(labels), TrainMode::full_finetune, opts);
    EXPECT_NE(backbone_checksum(model), before);
}

TEST(TrainHead, LinearProbeLearnsSeparableLabels) {
    // Label = whether the image is bright; the pooled tokens separate this easily.
    auto model = init_params<float>(small(16, 4), 1);
    auto head = init_linear_head<float>(8, 2, 2);
    std::vector<float> v(8 * 256);
    std::vector<int> labels(8);
    Rng rng(7);
    for (std::size_t b = 0; b < 8; ++b) {
        labels[b] = static_cast<int>(b % 2);
        for (std::size_t i = 0; i < 256; ++i)
            v[b * 256 + i] = static_cast<float>(rng.uniform(0.0, 0.5) + 0.5 * labels[b]);
    }
    const Tensor<float> images({8, 1, 16, 16}, std::move(v));
    auto opts = OptimConfig::head(60);
    opts.base_lr = 5e-2;
    const auto r = train_head(model, head, images, std::span<const int>(labels), TrainMode::linear_probe, opts);
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
    EXPECT_EQ(predict_classes(images, model, head), labels);
}

TEST(TrainHead, SegmentationRunsAndFreezesInLinearMode) {
    auto model = init_params<float>(small(64, 16), 1);
    auto head = init_segmentation_head<float>(8, 2);
    const auto before = backbone_checksum(model);
    const auto images = random_images(2, 64, 3);
    const auto masks = binarize_mask(images);
    auto opts = OptimConfig::head(2);
    opts.base_lr = 5e-3;
    const auto r = train_head(model, head, images, masks, TrainMode::linear_probe, opts);
    EXPECT_EQ(r.loss_history.size(), 2u);
    EXPECT_EQ(backbone_checksum(model), before);
    const auto pred = predict_masks(images, model, head);
    EXPECT_EQ(pred.shape(), images.shape());
    for (float p : pred.data()) EXPECT_TRUE(p == 0.0f || p == 1.0f);
}

TEST(HeadCheckpoint, RoundTrip) {
    const auto dir = scratch_dir("ckpt");
    const auto lin = init_linear_head<float>(8, 3, 2);
    save_head(lin, dir / "lin.ckpt");
    const auto lin2 = load_linear_head(dir / "lin.ckpt");
    EXPECT_EQ(vec(lin2.weight), vec(lin.weight));
    EXPECT_EQ(vec(lin2.bias), vec(lin.bias));
    save_head(lin2, dir / "lin2.ckpt");
    EXPECT_EQ(read_file_bytes(dir / "lin.ckpt"), read_file_bytes(dir / "lin2.ckpt"));

    const auto seg = init_segmentation_head<float>(8, 3);
    save_head(seg, dir / "seg.ckpt");
    const auto seg2 = load_segmentation_head(dir / "seg.ckpt");
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(vec(seg2.up_weight[i]), vec(seg.up_weight[i]));
    EXPECT_EQ(vec(seg2.out_weight), vec(seg.out_weight));

    EXPECT_THROW(load_linear_head(dir / "seg.ckpt"), LoadError);
    EXPECT_THROW(load_segmentation_head(dir / "lin.ckpt"), LoadError);
    fs::remove_all(dir);
}
