#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/rng.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

/// Square grayscale images cut into non-overlapping square patches.
struct PatchConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 16;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch_size * patch_size; }

    void validate() const {
        if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
            throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                              std::to_string(patch_size));
        }
    }

    bool operator==(const PatchConfig&) const = default;
};

/// Per-sample split of the patch sequence into visible and masked tokens.
///
/// shuffle_idx[j] is the original position of the j-th shuffled token; the first
/// keep_count shuffled tokens are visible. restore_idx is the inverse permutation.
struct MaskPlan {
    double ratio = 0.0;
    std::size_t keep_count = 0;
    std::vector<std::size_t> shuffle_idx;
    std::vector<std::size_t> restore_idx;
    std::vector<unsigned char> mask_flags;  // 1 = masked

    std::size_t num_patches() const { return shuffle_idx.size(); }
    std::size_t masked_count() const { return num_patches() - keep_count; }

    std::span<const std::size_t> visible() const { return std::span(shuffle_idx).first(keep_count); }
    std::span<const std::size_t> masked() const { return std::span(shuffle_idx).subspan(keep_count); }

    /// Nothing masked, tokens in grid order. Used by every downstream task.
    static MaskPlan identity(std::size_t n) {
        MaskPlan plan;
        plan.keep_count = n;
        plan.shuffle_idx.resize(n);
        std::iota(plan.shuffle_idx.begin(), plan.shuffle_idx.end(), std::size_t{0});
        plan.restore_idx = plan.shuffle_idx;
        plan.mask_flags.assign(n, 0);
        return plan;
    }
};

inline std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] >= perm.size()) throw IndexError("inverse_permutation: entry out of range");
        inv[perm[i]] = i;
    }
    return inv;
}

inline std::size_t keep_count_for(std::size_t n, double ratio) {
    // Tolerate representation error so that e.g. 196 * (1 - 0.75) gives 49.
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - ratio) + 1e-9));
}

/// Random visible/masked partition by argsort of per-patch uniform noise.
inline MaskPlan make_mask_plan(std::size_t n, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ConfigError("mask ratio must lie in [0,1), got " + std::to_string(ratio));
    }
    if (n == 0) throw ConfigError("mask plan needs at least one patch");
    std::vector<double> noise(n);
    for (auto& v : noise) v = rng.uniform();

    MaskPlan plan;
    plan.ratio = ratio;
    plan.keep_count = keep_count_for(n, ratio);
    plan.shuffle_idx.resize(n);
    std::iota(plan.shuffle_idx.begin(), plan.shuffle_idx.end(), std::size_t{0});
    std::stable_sort(plan.shuffle_idx.begin(), plan.shuffle_idx.end(),
                     [&](std::size_t a, std::size_t b) { return noise[a] < noise[b]; });
    plan.restore_idx = inverse_permutation(plan.shuffle_idx);
    plan.mask_flags.assign(n, 1);
    for (auto i : plan.visible()) plan.mask_flags[i] = 0;
    return plan;
}

namespace detail {
inline void check_image_shape(const Shape& shape, const PatchConfig& cfg, std::string_view op) {
    cfg.validate();
    if (shape != Shape{1, cfg.image_size, cfg.image_size}) {
        throw ConfigError(std::string(op) + ": expected image [1," + std::to_string(cfg.image_size) + "," +
                          std::to_string(cfg.image_size) + "], got " + to_string(shape));
    }
}
}  // namespace detail

/// [1,H,W] image to [N, P*P] rows; row k is grid cell (k / G, k % G), flattened row-major.
template <Scalar T>
Tensor<T> patchify(const Tensor<T>& image, const PatchConfig& cfg) {
    detail::check_image_shape(image.shape(), cfg, "patchify");
    const std::size_t p = cfg.patch_size, g = cfg.grid(), size = cfg.image_size, pd = cfg.patch_dim();
    // src[k] is the pixel index feeding output element k.
    std::vector<std::size_t> src(cfg.num_patches() * pd);
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx)
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    src[(gy * g + gx) * pd + y * p + x] = (gy * p + y) * size + gx * p + x;
    const auto in = image.data();
    std::vector<T> out(src.size());
    for (std::size_t k = 0; k < src.size(); ++k) out[k] = in[src[k]];
    auto xn = image.node();
    return detail::make_result<T>({cfg.num_patches(), pd}, std::move(out), "patchify", {image},
                                  [xn, src = std::move(src)](detail::Node<T>& self) {
                                      auto gbuf = xn->grad_buffer();
                                      for (std::size_t k = 0; k < src.size(); ++k) gbuf[src[k]] += self.grad[k];
                                  });
}

/// Inverse of patchify. Plain values only; used for rendering.
template <Scalar T>
Tensor<T> unpatchify(const Tensor<T>& patches, const PatchConfig& cfg) {
    cfg.validate();
    if (patches.shape() != Shape{cfg.num_patches(), cfg.patch_dim()}) {
        throw ConfigError("unpatchify: expected [" + std::to_string(cfg.num_patches()) + "," +
                          std::to_string(cfg.patch_dim()) + "], got " + to_string(patches.shape()));
    }
    const std::size_t p = cfg.patch_size, g = cfg.grid(), size = cfg.image_size, pd = cfg.patch_dim();
    const auto in = patches.data();
    std::vector<T> out(size * size);
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx)
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    out[(gy * p + y) * size + gx * p + x] = in[(gy * g + gx) * pd + y * p + x];
    return Tensor<T>({1, size, size}, std::move(out));
}

/// Fixed 2-D sine-cosine embedding over a square patch grid.
///
/// The first d/2 columns encode the grid row, the last d/2 the grid column; each
/// half is [sin(pos * w_i), cos(pos * w_i)] with w_i = 10000^(-i / (d/4)).
template <Scalar T>
Tensor<T> positional_embedding(std::size_t n, std::size_t d) {
    if (d == 0 || d % 4 != 0) throw ConfigError("positional embedding dim must be divisible by 4, got " + std::to_string(d));
    const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (g * g != n) throw ConfigError("positional embedding needs a square patch count, got " + std::to_string(n));
    const std::size_t quarter = d / 4;
    std::vector<T> out(n * d);
    for (std::size_t k = 0; k < n; ++k) {
        const double pos[2] = {static_cast<double>(k / g), static_cast<double>(k % g)};
        for (std::size_t half = 0; half < 2; ++half) {
            for (std::size_t i = 0; i < quarter; ++i) {
                const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
                const double angle = pos[half] * omega;
                out[k * d + half * 2 * quarter + i] = static_cast<T>(std::sin(angle));
                out[k * d + half * 2 * quarter + quarter + i] = static_cast<T>(std::cos(angle));
            }
        }
    }
    return Tensor<T>({n, d}, std::move(out));
}

/// Per-row (x - mean) / sqrt(var + eps) with population variance. Plain values.
template <Scalar T>
Tensor<T> normalize_patch_targets(const Tensor<T>& patches, double eps = 1e-6) {
    if (patches.rank() != 2) throw DimensionError("normalize_patch_targets: expected [N, P*P], got " + to_string(patches.shape()));
    const std::size_t rows = patches.dim(0), cols = patches.dim(1);
    const auto in = patches.data();
    std::vector<T> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = in.data() + r * cols;
        // Constant rows are exactly zero; a summed mean can miss row[0] by an ulp.
        if (std::all_of(row, row + cols, [&](T v) { return v == row[0]; })) continue;
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += row[c];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<double>(cols);
        const double denom = std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            // A zero denominator only arises for constant rows with eps = 0.
            out[r * cols + c] = denom > 0.0 ? static_cast<T>((row[c] - mean) / denom) : T{0};
        }
    }
    return Tensor<T>(patches.shape(), std::move(out));
}

}  // namespace maekit
