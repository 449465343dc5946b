#pragma once

#include <functional>
#include <span>
#include <vector>

#include "maekit/data.hpp"
#include "maekit/model.hpp"
#include "maekit/optim.hpp"
#include "maekit/patchwork.hpp"

namespace maekit {

struct PretrainOptions {
    OptimConfig optim = OptimConfig::pretrain(1);
    double mask_ratio = 0.75;
};

struct PretrainResult {
    std::vector<double> epoch_losses;
};

/// Masked-autoencoder pre-training over images [B,1,H,W].
///
/// One generator seeded from optim.seed drives both the sample order and the
/// per-sample mask plans, so (seed, data, config) fix the whole trajectory.
/// `on_epoch(epoch, loss)` runs after every epoch.
template <Scalar T>
PretrainResult pretrain(MaeModel<T>& model, const Tensor<T>& images, const PretrainOptions& opts, RunLog* log = nullptr,
                        const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (images.rank() != 4 || images.dim(0) == 0) throw ConfigError("pretrain: dataset is empty");
    if (!(opts.mask_ratio > 0.0 && opts.mask_ratio < 1.0)) {
        throw ConfigError("pretrain: mask ratio must lie in (0,1) so that some patches are masked");
    }
    const std::size_t n = model.cfg.patch.num_patches();
    if (keep_count_for(n, opts.mask_ratio) == 0 || keep_count_for(n, opts.mask_ratio) == n) {
        throw ConfigError("pretrain: mask ratio leaves no visible or no masked patches");
    }
    TrainState<T> state(model.parameters(), opts.optim, images.dim(0), log);
    Rng rng(opts.optim.seed);
    PretrainResult result;
    for (std::size_t epoch = 0; epoch < opts.optim.epochs; ++epoch) {
        const double loss = train_epoch<T>(images.dim(0), state, rng, [&](std::span<const std::size_t> idx, Rng& r) {
            std::vector<MaskPlan> plans;
            for (std::size_t k = 0; k < idx.size(); ++k) plans.push_back(make_mask_plan(n, opts.mask_ratio, r));
            return mae_forward_loss(take_batch(images, idx), std::span<const MaskPlan>(plans), model);
        });
        result.epoch_losses.push_back(loss);
        if (on_epoch) on_epoch(epoch, loss);
    }
    return result;
}

/// Mean masked-patch loss over `images` with plans drawn from `seed`; no update.
template <Scalar T>
double evaluate_mae_loss(const MaeModel<T>& model, const Tensor<T>& images, double mask_ratio, std::uint64_t seed) {
    NoGradGuard guard;
    Rng rng(seed);
    std::vector<MaskPlan> plans;
    for (std::size_t b = 0; b < images.dim(0); ++b) plans.push_back(make_mask_plan(model.cfg.patch.num_patches(), mask_ratio, rng));
    return mae_forward_loss(images, std::span<const MaskPlan>(plans), model).item();
}

}  // namespace maekit
