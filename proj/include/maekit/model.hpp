#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/ops.hpp"
#include "maekit/patchwork.hpp"
#include "maekit/rng.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

struct ArchConfig {
    PatchConfig patch;
    std::size_t enc_dim = 64;
    std::size_t enc_depth = 4;
    std::size_t enc_heads = 4;
    std::size_t dec_dim = 32;
    std::size_t dec_depth = 2;
    std::size_t dec_heads = 4;
    std::size_t mlp_ratio = 4;

    /// Laptop-scale preset used by the acceptance runs.
    static ArchConfig desk() { return ArchConfig{}; }

    /// ViT-B/16 encoder with the usual 512-wide, 8-deep MAE decoder.
    static ArchConfig vit_b() {
        ArchConfig c;
        c.patch = {224, 16};
        c.enc_dim = 768;
        c.enc_depth = 12;
        c.enc_heads = 12;
        c.dec_dim = 512;
        c.dec_depth = 8;
        c.dec_heads = 16;
        return c;
    }

    static ArchConfig preset(const std::string& name) {
        if (name == "desk") return desk();
        if (name == "vit-b") return vit_b();
        throw ConfigError("unknown preset '" + name + "' (expected desk or vit-b)");
    }

    void validate() const {
        patch.validate();
        if (enc_heads == 0 || enc_dim % enc_heads != 0) throw ConfigError("enc_dim must be divisible by enc_heads");
        if (dec_heads == 0 || dec_dim % dec_heads != 0) throw ConfigError("dec_dim must be divisible by dec_heads");
        if (enc_dim % 4 != 0 || dec_dim % 4 != 0) throw ConfigError("embedding dims must be divisible by 4");
        if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
    }

    /// Canonical key/value form, sorted by key. Used in checkpoint headers.
    std::map<std::string, std::string> to_fields() const {
        return {{"dec_depth", std::to_string(dec_depth)},   {"dec_dim", std::to_string(dec_dim)},
                {"dec_heads", std::to_string(dec_heads)},   {"enc_depth", std::to_string(enc_depth)},
                {"enc_dim", std::to_string(enc_dim)},       {"enc_heads", std::to_string(enc_heads)},
                {"image_size", std::to_string(patch.image_size)}, {"mlp_ratio", std::to_string(mlp_ratio)},
                {"patch_size", std::to_string(patch.patch_size)}};
    }

    static ArchConfig from_fields(const std::map<std::string, std::string>& fields) {
        auto get = [&](const char* key) -> std::size_t {
            auto it = fields.find(key);
            if (it == fields.end()) throw ConfigError(std::string("missing config key '") + key + "'");
            try {
                return static_cast<std::size_t>(std::stoull(it->second));
            } catch (const std::exception&) {
                throw ConfigError(std::string("bad value for '") + key + "': " + it->second);
            }
        };
        ArchConfig c;
        c.patch = {get("image_size"), get("patch_size")};
        c.enc_dim = get("enc_dim");
        c.enc_depth = get("enc_depth");
        c.enc_heads = get("enc_heads");
        c.dec_dim = get("dec_dim");
        c.dec_depth = get("dec_depth");
        c.dec_heads = get("dec_heads");
        c.mlp_ratio = get("mlp_ratio");
        c.validate();
        return c;
    }

    bool operator==(const ArchConfig&) const = default;
};

template <Scalar T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }
};

template <Scalar T>
struct LayerNormAffine {
    Tensor<T> gain;    // [d]
    Tensor<T> offset;  // [d]

    Tensor<T> operator()(const Tensor<T>& x) const {
        return add(mul(layer_norm(x, x.rank() - 1, T{1e-6}), gain), offset);
    }
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <Scalar T>
struct Block {
    LayerNormAffine<T> norm1;
    Linear<T> qkv;
    Linear<T> proj;
    LayerNormAffine<T> norm2;
    Linear<T> fc1;
    Linear<T> fc2;
    std::size_t heads = 1;

    Tensor<T> attention(const Tensor<T>& x) const {
        const std::size_t d = x.dim(1), hd = d / heads;
        const T scale_factor = T{1} / std::sqrt(static_cast<T>(hd));
        const auto packed = qkv(x);
        std::vector<Tensor<T>> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const auto q = narrow_cols(packed, h * hd, hd);
            const auto k = narrow_cols(packed, d + h * hd, hd);
            const auto v = narrow_cols(packed, 2 * d + h * hd, hd);
            const auto weights = softmax(scale(matmul(q, transpose(k)), scale_factor), 1);
            outs.push_back(matmul(weights, v));
        }
        return proj(heads == 1 ? outs.front() : concat_cols(outs));
    }

    /// x: [tokens, d]
    Tensor<T> operator()(const Tensor<T>& x) const {
        const auto h = add(x, attention(norm1(x)));
        return add(h, fc2(gelu(fc1(norm2(h)))));
    }
};

struct ParamSpec {
    std::string name;
    Shape shape;
};

namespace detail {

inline void block_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t ratio) {
    out.push_back({prefix + "norm1.gain", {d}});
    out.push_back({prefix + "norm1.offset", {d}});
    out.push_back({prefix + "attn.qkv.weight", {d, 3 * d}});
    out.push_back({prefix + "attn.qkv.bias", {3 * d}});
    out.push_back({prefix + "attn.proj.weight", {d, d}});
    out.push_back({prefix + "attn.proj.bias", {d}});
    out.push_back({prefix + "norm2.gain", {d}});
    out.push_back({prefix + "norm2.offset", {d}});
    out.push_back({prefix + "mlp.fc1.weight", {d, ratio * d}});
    out.push_back({prefix + "mlp.fc1.bias", {ratio * d}});
    out.push_back({prefix + "mlp.fc2.weight", {ratio * d, d}});
    out.push_back({prefix + "mlp.fc2.bias", {d}});
}

}  // namespace detail

/// Every learnable tensor of the MAE for `cfg`, in construction order.
inline std::vector<ParamSpec> parameter_specs(const ArchConfig& cfg) {
    const std::size_t pd = cfg.patch.patch_dim(), e = cfg.enc_dim, d = cfg.dec_dim;
    std::vector<ParamSpec> out;
    out.push_back({"encoder.patch_embed.weight", {pd, e}});
    out.push_back({"encoder.patch_embed.bias", {e}});
    for (std::size_t i = 0; i < cfg.enc_depth; ++i)
        detail::block_specs(out, "encoder.blocks." + std::to_string(i) + ".", e, cfg.mlp_ratio);
    out.push_back({"encoder.norm.gain", {e}});
    out.push_back({"encoder.norm.offset", {e}});
    out.push_back({"decoder.embed.weight", {e, d}});
    out.push_back({"decoder.embed.bias", {d}});
    out.push_back({"decoder.mask_token", {d}});
    for (std::size_t i = 0; i < cfg.dec_depth; ++i)
        detail::block_specs(out, "decoder.blocks." + std::to_string(i) + ".", d, cfg.mlp_ratio);
    out.push_back({"decoder.norm.gain", {d}});
    out.push_back({"decoder.norm.offset", {d}});
    out.push_back({"decoder.pred.weight", {d, pd}});
    out.push_back({"decoder.pred.bias", {pd}});
    return out;
}

/// Closed-form parameter count.
///
/// A block of width w with MLP ratio r holds (4 + 2r) w^2 + (9 + r) w values:
/// qkv 3w^2+3w, proj w^2+w, two MLP matrices 2r w^2 + rw + w, two norms 4w.
inline std::size_t parameter_count(const ArchConfig& cfg) {
    const std::size_t pd = cfg.patch.patch_dim(), e = cfg.enc_dim, d = cfg.dec_dim, r = cfg.mlp_ratio;
    auto block = [r](std::size_t w) { return (4 + 2 * r) * w * w + (9 + r) * w; };
    return (pd * e + e) + cfg.enc_depth * block(e) + 2 * e + (e * d + d) + d + cfg.dec_depth * block(d) + 2 * d +
           (d * pd + pd);
}

template <Scalar T>
struct MaeModel {
    ArchConfig cfg;
    Linear<T> patch_embed;
    std::vector<Block<T>> encoder;
    LayerNormAffine<T> encoder_norm;
    Linear<T> decoder_embed;
    Tensor<T> mask_token;
    std::vector<Block<T>> decoder;
    LayerNormAffine<T> decoder_norm;
    Linear<T> prediction;
    Tensor<T> encoder_pos;  // fixed, [N, enc_dim]
    Tensor<T> decoder_pos;  // fixed, [N, dec_dim]

    /// Learnable tensors paired with their names, in parameter_specs order.
    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
        std::vector<Tensor<T>> flat;
        auto push_block = [&flat](const Block<T>& b) {
            for (const auto& t : {b.norm1.gain, b.norm1.offset, b.qkv.weight, b.qkv.bias, b.proj.weight, b.proj.bias,
                                  b.norm2.gain, b.norm2.offset, b.fc1.weight, b.fc1.bias, b.fc2.weight, b.fc2.bias})
                flat.push_back(t);
        };
        flat.push_back(patch_embed.weight);
        flat.push_back(patch_embed.bias);
        for (const auto& b : encoder) push_block(b);
        flat.push_back(encoder_norm.gain);
        flat.push_back(encoder_norm.offset);
        flat.push_back(decoder_embed.weight);
        flat.push_back(decoder_embed.bias);
        flat.push_back(mask_token);
        for (const auto& b : decoder) push_block(b);
        flat.push_back(decoder_norm.gain);
        flat.push_back(decoder_norm.offset);
        flat.push_back(prediction.weight);
        flat.push_back(prediction.bias);

        const auto specs = parameter_specs(cfg);
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.reserve(specs.size());
        for (std::size_t i = 0; i < specs.size(); ++i) out.emplace_back(specs[i].name, flat[i]);
        return out;
    }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    /// Encoder-side tensors only (the backbone kept for downstream tasks).
    std::vector<Tensor<T>> encoder_parameters() const {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : named_parameters())
            if (name.starts_with("encoder.")) out.push_back(t);
        return out;
    }
};

namespace detail {

template <Scalar T>
Block<T> take_block(const std::map<std::string, Tensor<T>>& p, const std::string& prefix, std::size_t heads) {
    auto at = [&](const std::string& key) { return p.at(prefix + key); };
    Block<T> b;
    b.norm1 = {at("norm1.gain"), at("norm1.offset")};
    b.qkv = {at("attn.qkv.weight"), at("attn.qkv.bias")};
    b.proj = {at("attn.proj.weight"), at("attn.proj.bias")};
    b.norm2 = {at("norm2.gain"), at("norm2.offset")};
    b.fc1 = {at("mlp.fc1.weight"), at("mlp.fc1.bias")};
    b.fc2 = {at("mlp.fc2.weight"), at("mlp.fc2.bias")};
    b.heads = heads;
    return b;
}

}  // namespace detail

/// Assemble a model from named tensors (which must cover parameter_specs(cfg)).
template <Scalar T>
MaeModel<T> assemble_model(const ArchConfig& cfg, const std::map<std::string, Tensor<T>>& params) {
    cfg.validate();
    for (const auto& spec : parameter_specs(cfg)) {
        auto it = params.find(spec.name);
        if (it == params.end()) throw ContractError("missing parameter '" + spec.name + "'");
        if (it->second.shape() != spec.shape) {
            throw DimensionError("parameter '" + spec.name + "' has shape " + to_string(it->second.shape()) +
                                 ", expected " + to_string(spec.shape));
        }
    }
    MaeModel<T> m;
    m.cfg = cfg;
    m.patch_embed = {params.at("encoder.patch_embed.weight"), params.at("encoder.patch_embed.bias")};
    for (std::size_t i = 0; i < cfg.enc_depth; ++i)
        m.encoder.push_back(detail::take_block(params, "encoder.blocks." + std::to_string(i) + ".", cfg.enc_heads));
    m.encoder_norm = {params.at("encoder.norm.gain"), params.at("encoder.norm.offset")};
    m.decoder_embed = {params.at("decoder.embed.weight"), params.at("decoder.embed.bias")};
    m.mask_token = params.at("decoder.mask_token");
    for (std::size_t i = 0; i < cfg.dec_depth; ++i)
        m.decoder.push_back(detail::take_block(params, "decoder.blocks." + std::to_string(i) + ".", cfg.dec_heads));
    m.decoder_norm = {params.at("decoder.norm.gain"), params.at("decoder.norm.offset")};
    m.prediction = {params.at("decoder.pred.weight"), params.at("decoder.pred.bias")};
    m.encoder_pos = positional_embedding<T>(cfg.patch.num_patches(), cfg.enc_dim);
    m.decoder_pos = positional_embedding<T>(cfg.patch.num_patches(), cfg.dec_dim);
    return m;
}

/// Weights ~ xavier uniform, biases 0, norm gains 1 / offsets 0,
/// mask token ~ normal(0.02). Fully determined by `seed`.
template <Scalar T>
MaeModel<T> init_params(const ArchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    std::map<std::string, Tensor<T>> params;
    for (const auto& spec : parameter_specs(cfg)) {
        std::vector<T> values(numel_of(spec.shape), T{0});
        if (spec.name.ends_with(".weight")) {
            const double bound = std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
            for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
        } else if (spec.name.ends_with(".gain")) {
            std::fill(values.begin(), values.end(), T{1});
        } else if (spec.name == "decoder.mask_token") {
            for (auto& v : values) v = static_cast<T>(rng.normal() * 0.02);
        }
        params.emplace(spec.name, Tensor<T>(spec.shape, std::move(values), true));
    }
    return assemble_model(cfg, params);
}

/// Deep copy with element type conversion (e.g. float weights into a double
/// model for gradient checking).
template <Scalar To, Scalar From>
MaeModel<To> cast_model(const MaeModel<From>& model) {
    std::map<std::string, Tensor<To>> params;
    for (const auto& [name, t] : model.named_parameters()) {
        std::vector<To> values(t.data().begin(), t.data().end());
        params.emplace(name, Tensor<To>(t.shape(), std::move(values), true));
    }
    return assemble_model(model.cfg, params);
}

// ---------------------------------------------------------------- forward passes

namespace detail {

template <Scalar T>
void check_batch(const Tensor<T>& images, std::span<const MaskPlan> plans, const ArchConfig& cfg, std::string_view op) {
    const std::size_t s = cfg.patch.image_size;
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != s || images.dim(3) != s) {
        throw ConfigError(std::string(op) + ": expected images [B,1," + std::to_string(s) + "," + std::to_string(s) +
                          "], got " + to_string(images.shape()));
    }
    if (plans.size() != images.dim(0)) {
        throw ContractError(std::string(op) + ": " + std::to_string(images.dim(0)) + " images but " +
                            std::to_string(plans.size()) + " mask plans");
    }
    const std::size_t n = cfg.patch.num_patches();
    for (const auto& plan : plans) {
        if (plan.num_patches() != n || plan.keep_count != plans.front().keep_count || plan.keep_count == 0) {
            throw ContractError(std::string(op) + ": mask plan does not match " + std::to_string(n) +
                                " patches / batch keep count");
        }
    }
}

}  // namespace detail

/// Visible-token representations of one image: [keep_count, enc_dim].
template <Scalar T>
Tensor<T> encode_one(const Tensor<T>& image, const MaskPlan& plan, const MaeModel<T>& model) {
    auto x = add(model.patch_embed(patchify(image, model.cfg.patch)), model.encoder_pos);
    x = gather_rows(x, plan.visible());
    for (const auto& block : model.encoder) x = block(x);
    return model.encoder_norm(x);
}

/// images [B,1,H,W] -> [B, keep_count, enc_dim]; each sample uses its own plan.
template <Scalar T>
Tensor<T> encode(const Tensor<T>& images, std::span<const MaskPlan> plans, const MaeModel<T>& model) {
    detail::check_batch(images, plans, model.cfg, "encode");
    std::vector<Tensor<T>> outs;
    outs.reserve(plans.size());
    for (std::size_t b = 0; b < plans.size(); ++b) outs.push_back(encode_one(select(images, b), plans[b], model));
    return stack(outs);
}

/// Per-patch pixel predictions of one sample: [N, P*P].
template <Scalar T>
Tensor<T> decode_one(const Tensor<T>& latent, const MaskPlan& plan, const MaeModel<T>& model) {
    if (latent.rank() != 2 || latent.dim(0) != plan.keep_count || latent.dim(1) != model.cfg.enc_dim) {
        throw ContractError("decode: latent " + to_string(latent.shape()) + " does not match plan keep count " +
                            std::to_string(plan.keep_count) + " and enc_dim " + std::to_string(model.cfg.enc_dim));
    }
    auto x = model.decoder_embed(latent);
    if (plan.masked_count() > 0) {
        const auto tokens = add(Tensor<T>::zeros({plan.masked_count(), model.cfg.dec_dim}), model.mask_token);
        x = concat_rows(std::vector<Tensor<T>>{x, tokens});
    }
    // Row i of the unshuffled sequence is shuffled token restore_idx[i].
    x = add(gather_rows(x, plan.restore_idx), model.decoder_pos);
    for (const auto& block : model.decoder) x = block(x);
    return model.prediction(model.decoder_norm(x));
}

/// latent [B, keep, enc_dim] -> predictions [B, N, P*P].
template <Scalar T>
Tensor<T> decode(const Tensor<T>& latent, std::span<const MaskPlan> plans, const MaeModel<T>& model) {
    if (latent.rank() != 3 || latent.dim(0) != plans.size()) {
        throw ContractError("decode: latent " + to_string(latent.shape()) + " does not match " +
                            std::to_string(plans.size()) + " plans");
    }
    std::vector<Tensor<T>> outs;
    outs.reserve(plans.size());
    for (std::size_t b = 0; b < plans.size(); ++b) outs.push_back(decode_one(select(latent, b), plans[b], model));
    return stack(outs);
}

/// Masked-patch reconstruction loss of one sample against normalized targets:
/// squared error averaged over pixels, then over masked patches.
template <Scalar T>
Tensor<T> mae_loss_one(const Tensor<T>& pred, const Tensor<T>& image, const MaskPlan& plan, const PatchConfig& cfg,
                       double eps = 1e-6) {
    if (plan.masked_count() == 0) throw ContractError("mae_loss: plan masks no patches; the loss is undefined");
    const auto target = normalize_patch_targets(patchify(image, cfg).detach(), eps);
    detail::require_same_shape(pred, target, "mae_loss");
    const auto diff = sub(pred, target);
    const auto per_patch = mean(mul(diff, diff), 1);
    std::vector<T> weights(plan.num_patches());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = plan.mask_flags[i] ? T{1} : T{0};
    const std::size_t n = weights.size();
    const auto masked = mul(per_patch, Tensor<T>({n}, std::move(weights)));
    return scale(sum(masked), T{1} / static_cast<T>(plan.masked_count()));
}

/// pred [B,N,P*P], images [B,1,H,W] -> scalar mean over the batch.
template <Scalar T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& images, std::span<const MaskPlan> plans,
                   const PatchConfig& cfg, double eps = 1e-6) {
    if (pred.rank() != 3 || pred.dim(0) != plans.size() || images.rank() != 4 || images.dim(0) != plans.size()) {
        throw ContractError("mae_loss: batch shapes " + to_string(pred.shape()) + " / " + to_string(images.shape()) +
                            " inconsistent with " + std::to_string(plans.size()) + " plans");
    }
    std::vector<Tensor<T>> losses;
    for (std::size_t b = 0; b < plans.size(); ++b)
        losses.push_back(mae_loss_one(select(pred, b), select(images, b), plans[b], cfg, eps));
    return mean(stack(losses));
}

/// Full pre-training objective for one batch.
template <Scalar T>
Tensor<T> mae_forward_loss(const Tensor<T>& images, std::span<const MaskPlan> plans, const MaeModel<T>& model) {
    detail::check_batch(images, plans, model.cfg, "mae_forward_loss");
    std::vector<Tensor<T>> losses;
    losses.reserve(plans.size());
    for (std::size_t b = 0; b < plans.size(); ++b) {
        const auto image = select(images, b);
        const auto pred = decode_one(encode_one(image, plans[b], model), plans[b], model);
        losses.push_back(mae_loss_one(pred, image, plans[b], model.cfg.patch));
    }
    return mean(stack(losses));
}

}  // namespace maekit
