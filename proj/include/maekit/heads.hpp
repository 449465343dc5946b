#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maekit/checkpoint.hpp"
#include "maekit/data.hpp"
#include "maekit/errors.hpp"
#include "maekit/metrics.hpp"
#include "maekit/model.hpp"
#include "maekit/ops.hpp"
#include "maekit/optim.hpp"
#include "maekit/patchwork.hpp"

namespace maekit {

enum class TrainMode { linear_probe, full_finetune };

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "linear" || s == "linear_probe") return TrainMode::linear_probe;
    if (s == "full" || s == "full_finetune") return TrainMode::full_finetune;
    throw ConfigError("unknown training mode '" + s + "' (expected linear or full)");
}

/// Fully connected layer over mean-pooled encoder tokens.
template <Scalar T>
struct LinearProbeHead {
    Tensor<T> weight;  // [enc_dim, classes]
    Tensor<T> bias;    // [classes]

    std::size_t enc_dim() const { return weight.dim(0); }
    std::size_t num_classes() const { return weight.dim(1); }

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
        return {{"head.bias", bias}, {"head.weight", weight}};
    }
    std::vector<Tensor<T>> parameters() const { return {weight, bias}; }
};

/// Channel counts of the four 2x upsampling stages.
inline constexpr std::array<std::size_t, 4> kSegmentationChannels{256, 128, 64, 32};

/// Four transposed-conv (2x2, stride 2) + GeLU stages, then a 1x1 conv to a
/// single channel. Sigmoid is applied by segment_forward.
template <Scalar T>
struct SegmentationHead {
    std::array<Tensor<T>, 4> up_weight;  // [c_in, c_out, 2, 2]
    std::array<Tensor<T>, 4> up_bias;    // [c_out, 1, 1]
    Tensor<T> out_weight;                // [1, 32]
    Tensor<T> out_bias;                  // [1, 1]

    std::size_t enc_dim() const { return up_weight[0].dim(0); }

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        for (std::size_t i = 0; i < 4; ++i) {
            out.emplace_back("head.up" + std::to_string(i) + ".bias", up_bias[i]);
            out.emplace_back("head.up" + std::to_string(i) + ".weight", up_weight[i]);
        }
        out.emplace_back("head.out.bias", out_bias);
        out.emplace_back("head.out.weight", out_weight);
        return out;
    }
    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }
};

namespace detail {
template <Scalar T>
Tensor<T> truncated_normal_tensor(Shape shape, Rng& rng) {
    std::vector<T> values(numel_of(shape));
    for (auto& v : values) v = static_cast<T>(rng.truncated_normal(0.02));
    return Tensor<T>(std::move(shape), std::move(values), true);
}
}  // namespace detail

template <Scalar T>
LinearProbeHead<T> init_linear_head(std::size_t enc_dim, std::size_t classes, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("a classification head needs at least 2 classes");
    Rng rng(seed);
    return {detail::truncated_normal_tensor<T>({enc_dim, classes}, rng), Tensor<T>::zeros({classes}, true)};
}

template <Scalar T>
SegmentationHead<T> init_segmentation_head(std::size_t enc_dim, std::uint64_t seed) {
    Rng rng(seed);
    SegmentationHead<T> head;
    std::size_t in = enc_dim;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t out = kSegmentationChannels[i];
        head.up_weight[i] = detail::truncated_normal_tensor<T>({in, out, 2, 2}, rng);
        head.up_bias[i] = Tensor<T>::zeros({out, 1, 1}, true);
        in = out;
    }
    head.out_weight = detail::truncated_normal_tensor<T>({1, in}, rng);
    head.out_bias = Tensor<T>::zeros({1, 1}, true);
    return head;
}

// ---------------------------------------------------------------- forward passes

/// All N encoder tokens of one image in grid order: [N, enc_dim].
template <Scalar T>
Tensor<T> encode_tokens(const Tensor<T>& image, const MaeModel<T>& model) {
    return encode_one(image, MaskPlan::identity(model.cfg.patch.num_patches()), model);
}

/// Pre-softmax scores of one image from its tokens: [1, classes].
template <Scalar T>
Tensor<T> classify_logits(const Tensor<T>& tokens, const LinearProbeHead<T>& head) {
    if (tokens.dim(1) != head.enc_dim()) {
        throw ConfigError("classification head expects " + std::to_string(head.enc_dim()) + "-dim tokens, got " +
                          to_string(tokens.shape()));
    }
    const auto pooled = reshape(mean(tokens, 0), {1, tokens.dim(1)});
    return add(matmul(pooled, head.weight), head.bias);
}

/// images [B,1,H,W] -> class probabilities [B, classes].
template <Scalar T>
Tensor<T> classify_forward(const Tensor<T>& images, const MaeModel<T>& model, const LinearProbeHead<T>& head) {
    if (head.enc_dim() != model.cfg.enc_dim) {
        throw ConfigError("classification head width " + std::to_string(head.enc_dim()) + " != encoder width " +
                          std::to_string(model.cfg.enc_dim));
    }
    std::vector<Tensor<T>> rows;
    for (std::size_t b = 0; b < images.dim(0); ++b)
        rows.push_back(classify_logits(encode_tokens(select(images, b), model), head));
    return softmax(concat_rows(rows), 1);
}

inline void require_segmentable(const PatchConfig& cfg) {
    if (cfg.patch_size != 16) {
        throw UnsupportedConfigError("segmentation head upsamples by exactly 16 (four 2x transposed convolutions); "
                                     "patch size must be 16, got " + std::to_string(cfg.patch_size));
    }
}

/// Per-pixel logits of one image from its grid-ordered tokens: [1, H, W].
template <Scalar T>
Tensor<T> segment_logits(const Tensor<T>& tokens, const SegmentationHead<T>& head, const PatchConfig& cfg) {
    require_segmentable(cfg);
    const std::size_t g = cfg.grid();
    if (tokens.rank() != 2 || tokens.dim(0) != g * g || tokens.dim(1) != head.enc_dim()) {
        throw ConfigError("segmentation head expects tokens [" + std::to_string(g * g) + "," +
                          std::to_string(head.enc_dim()) + "], got " + to_string(tokens.shape()));
    }
    // Token k sits at grid cell (k / G, k % G); channels become the leading axis.
    auto x = reshape(transpose(tokens), {tokens.dim(1), g, g});
    for (std::size_t i = 0; i < 4; ++i) x = gelu(add(conv_transpose2d(x, head.up_weight[i]), head.up_bias[i]));
    const std::size_t h = x.dim(1), w = x.dim(2);
    const auto flat = reshape(x, {x.dim(0), h * w});
    return reshape(add(matmul(head.out_weight, flat), head.out_bias), {1, h, w});
}

/// images [B,1,H,W] -> foreground probabilities [B,1,H,W].
template <Scalar T>
Tensor<T> segment_forward(const Tensor<T>& images, const MaeModel<T>& model, const SegmentationHead<T>& head) {
    require_segmentable(model.cfg.patch);
    std::vector<Tensor<T>> outs;
    for (std::size_t b = 0; b < images.dim(0); ++b)
        outs.push_back(sigmoid(segment_logits(encode_tokens(select(images, b), model), head, model.cfg.patch)));
    return stack(outs);
}

/// 1 where prob >= threshold, else 0.
template <Scalar T>
Tensor<T> binarize_mask(const Tensor<T>& probs, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("binarize threshold must lie in (0,1)");
    std::vector<T> out(probs.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs.data()[i] >= static_cast<T>(threshold) ? T{1} : T{0};
    return Tensor<T>(probs.shape(), std::move(out));
}

template <Scalar T>
std::vector<int> predict_classes(const Tensor<T>& images, const MaeModel<T>& model, const LinearProbeHead<T>& head) {
    NoGradGuard guard;
    return argmax_rows(classify_forward(images, model, head));
}

template <Scalar T>
Tensor<T> predict_masks(const Tensor<T>& images, const MaeModel<T>& model, const SegmentationHead<T>& head,
                        double threshold = 0.5) {
    NoGradGuard guard;
    return binarize_mask(segment_forward(images, model, head), threshold);
}

// ---------------------------------------------------------------- training

struct HeadTrainResult {
    std::vector<double> loss_history;    // mean batch loss per epoch
    std::vector<double> metric_history;  // training accuracy or micro f-score per epoch
};

namespace detail {

/// Token source for head training. In linear-probe mode the encoder is frozen
/// and inputs are never augmented, so tokens are computed once up front.
template <Scalar T>
class TokenSource {
public:
    TokenSource(const MaeModel<T>& model, const Tensor<T>& images, TrainMode mode)
        : model_(model), images_(images), mode_(mode) {
        if (mode_ == TrainMode::linear_probe) {
            NoGradGuard guard;
            for (std::size_t b = 0; b < images.dim(0); ++b) cached_.push_back(encode_tokens(select(images, b), model).detach());
        }
    }

    Tensor<T> operator()(std::size_t i) const {
        if (mode_ == TrainMode::linear_probe) return cached_[i];
        return encode_tokens(select(images_, i), model_);
    }

private:
    const MaeModel<T>& model_;
    const Tensor<T>& images_;
    TrainMode mode_;
    std::vector<Tensor<T>> cached_;
};

template <Scalar T>
std::vector<Tensor<T>> trainable(const MaeModel<T>& model, std::vector<Tensor<T>> head_params, TrainMode mode) {
    if (mode == TrainMode::full_finetune) {
        for (auto& t : model.encoder_parameters()) head_params.push_back(t);
    }
    return head_params;
}

}  // namespace detail

/// Train a classification head. linear_probe updates the head only; the
/// encoder is left bit-identical. full_finetune also updates the encoder.
template <Scalar T>
HeadTrainResult train_head(MaeModel<T>& model, LinearProbeHead<T>& head, const Tensor<T>& images,
                           std::span<const int> labels, TrainMode mode, const OptimConfig& opts,
                           RunLog* log = nullptr) {
    if (images.rank() != 4 || images.dim(0) == 0) throw ConfigError("train_head: dataset is empty");
    if (labels.size() != images.dim(0)) throw ConfigError("train_head: image and label counts differ");
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= head.num_classes()) {
            throw ConfigError("train_head: label " + std::to_string(l) + " outside the head's " +
                              std::to_string(head.num_classes()) + " classes");
        }
    }
    if (head.enc_dim() != model.cfg.enc_dim) throw ConfigError("train_head: head width does not match encoder");

    const detail::TokenSource<T> tokens(model, images, mode);
    TrainState<T> state(detail::trainable(model, head.parameters(), mode), opts, images.dim(0), log);
    Rng rng(opts.seed);
    HeadTrainResult result;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::size_t correct = 0;
        const double loss = train_epoch<T>(images.dim(0), state, rng, [&](std::span<const std::size_t> idx, Rng&) {
            std::vector<Tensor<T>> rows;
            std::vector<int> batch_labels;
            for (auto i : idx) {
                rows.push_back(classify_logits(tokens(i), head));
                batch_labels.push_back(labels[i]);
            }
            const auto logits = concat_rows(rows);
            const auto preds = argmax_rows(logits);
            for (std::size_t k = 0; k < preds.size(); ++k) correct += preds[k] == batch_labels[k] ? 1 : 0;
            return softmax_cross_entropy(logits, std::span<const int>(batch_labels));
        });
        result.loss_history.push_back(loss);
        result.metric_history.push_back(static_cast<double>(correct) / static_cast<double>(images.dim(0)));
    }
    return result;
}

/// Train a segmentation head with pixel-wise binary cross-entropy.
template <Scalar T>
HeadTrainResult train_head(MaeModel<T>& model, SegmentationHead<T>& head, const Tensor<T>& images,
                           const Tensor<T>& masks, TrainMode mode, const OptimConfig& opts, RunLog* log = nullptr) {
    require_segmentable(model.cfg.patch);
    if (images.rank() != 4 || images.dim(0) == 0) throw ConfigError("train_head: dataset is empty");
    if (masks.shape() != images.shape()) {
        throw ConfigError("train_head: masks " + to_string(masks.shape()) + " do not match images " +
                          to_string(images.shape()));
    }
    if (head.enc_dim() != model.cfg.enc_dim) throw ConfigError("train_head: head width does not match encoder");

    const detail::TokenSource<T> tokens(model, images, mode);
    TrainState<T> state(detail::trainable(model, head.parameters(), mode), opts, images.dim(0), log);
    Rng rng(opts.seed);
    HeadTrainResult result;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        ConfusionCounts counts;
        const double loss = train_epoch<T>(images.dim(0), state, rng, [&](std::span<const std::size_t> idx, Rng&) {
            std::vector<Tensor<T>> losses;
            for (auto i : idx) {
                const auto logits = segment_logits(tokens(i), head, model.cfg.patch);
                const auto target = select(masks, i);
                {
                    NoGradGuard guard;
                    counts += segmentation_confusion(binarize_mask(sigmoid(logits.detach())), target);
                }
                losses.push_back(sigmoid_bce(logits, target));
            }
            return mean(stack(losses));
        });
        result.loss_history.push_back(loss);
        result.metric_history.push_back(f_score(counts));
    }
    return result;
}

// ---------------------------------------------------------------- head checkpoints

template <Scalar T>
void save_head(const LinearProbeHead<T>& head, const std::filesystem::path& path) {
    Container c;
    c.header = {{"classes", std::to_string(head.num_classes())},
                {"enc_dim", std::to_string(head.enc_dim())},
                {"kind", "head.linear_probe"}};
    for (const auto& [name, t] : head.named_parameters()) c.tensors.emplace(name, store(t));
    write_container(c, path);
}

template <Scalar T>
void save_head(const SegmentationHead<T>& head, const std::filesystem::path& path) {
    Container c;
    c.header = {{"enc_dim", std::to_string(head.enc_dim())}, {"kind", "head.segmentation"}};
    for (const auto& [name, t] : head.named_parameters()) c.tensors.emplace(name, store(t));
    write_container(c, path);
}

namespace detail {
inline const StoredTensor& require_tensor(const Container& c, const std::string& name, const Shape& shape,
                                          const std::string& source) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw LoadError(source + ": missing tensor '" + name + "'");
    if (it->second.shape != shape) {
        throw LoadError(source + ": tensor '" + name + "' has shape " + to_string(it->second.shape) + ", expected " +
                        to_string(shape));
    }
    return it->second;
}

inline std::size_t header_size(const Container& c, const std::string& key, const std::string& source) {
    auto it = c.header.find(key);
    if (it == c.header.end()) throw LoadError(source + ": missing header key '" + key + "'");
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw LoadError(source + ": bad header value for '" + key + "'");
    }
}
}  // namespace detail

template <Scalar T = float>
LinearProbeHead<T> load_linear_head(const std::filesystem::path& path) {
    const auto c = read_container(path);
    const std::string src = path.string();
    if (c.header.count("kind") == 0 || c.header.at("kind") != "head.linear_probe") {
        throw LoadError(src + ": not a linear-probe head checkpoint");
    }
    const auto e = detail::header_size(c, "enc_dim", src), k = detail::header_size(c, "classes", src);
    return {restore<T>(detail::require_tensor(c, "head.weight", {e, k}, src)),
            restore<T>(detail::require_tensor(c, "head.bias", {k}, src))};
}

template <Scalar T = float>
SegmentationHead<T> load_segmentation_head(const std::filesystem::path& path) {
    const auto c = read_container(path);
    const std::string src = path.string();
    if (c.header.count("kind") == 0 || c.header.at("kind") != "head.segmentation") {
        throw LoadError(src + ": not a segmentation head checkpoint");
    }
    SegmentationHead<T> head;
    std::size_t in = detail::header_size(c, "enc_dim", src);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t out = kSegmentationChannels[i];
        const std::string p = "head.up" + std::to_string(i);
        head.up_weight[i] = restore<T>(detail::require_tensor(c, p + ".weight", {in, out, 2, 2}, src));
        head.up_bias[i] = restore<T>(detail::require_tensor(c, p + ".bias", {out, 1, 1}, src));
        in = out;
    }
    head.out_weight = restore<T>(detail::require_tensor(c, "head.out.weight", {1, in}, src));
    head.out_bias = restore<T>(detail::require_tensor(c, "head.out.bias", {1, 1}, src));
    return head;
}

}  // namespace maekit
