#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/rng.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

enum class Schedule { cosine, constant };

struct OptimConfig {
    double base_lr = 1e-3;
    std::size_t batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
    std::size_t epochs = 1;
    double warmup_epochs = 0.0;
    Schedule schedule = Schedule::cosine;
    std::uint64_t seed = 0;

    /// Defaults for masked-autoencoder pre-training: cosine with 5% warmup.
    static OptimConfig pretrain(std::size_t epochs) {
        OptimConfig c;
        c.epochs = epochs;
        c.warmup_epochs = 0.05 * static_cast<double>(epochs);
        return c;
    }

    /// Defaults for downstream heads: constant rate, no weight decay.
    static OptimConfig head(std::size_t epochs) {
        OptimConfig c;
        c.epochs = epochs;
        c.beta2 = 0.999;
        c.weight_decay = 0.0;
        c.schedule = Schedule::constant;
        return c;
    }

    void validate() const {
        if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (warmup_epochs < 0.0 || warmup_epochs > static_cast<double>(epochs)) {
            throw ConfigError("warmup_epochs must lie in [0, epochs]");
        }
    }
};

/// Learning rate at 0-based `step` of a run of `total_steps` steps.
///
/// Linear warmup from 0 to base_lr over `warmup_steps`, then (cosine schedule)
/// half-cosine decay reaching 0 at the final step, total_steps - 1.
inline double lr_at(std::size_t step, const OptimConfig& cfg, std::size_t total_steps, std::size_t warmup_steps) {
    if (step < warmup_steps) return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (cfg.schedule == Schedule::constant) return cfg.base_lr;
    if (total_steps == 0 || total_steps - 1 <= warmup_steps) return cfg.base_lr;
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - 1 - warmup_steps));
    return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline std::size_t steps_per_epoch(std::size_t samples, std::size_t batch) { return (samples + batch - 1) / batch; }

/// Adaptive-moment state for one parameter tensor.
struct MomentSlot {
    std::vector<double> m;
    std::vector<double> v;
};

/// One AdamW update of a flat parameter buffer with decoupled weight decay:
///   p <- p - lr * wd * p
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// `t` is the 1-based step count used for bias correction.
template <Scalar T>
void adamw_step(std::span<T> param, std::span<const T> grad, MomentSlot& slot, double lr, std::size_t t,
                const OptimConfig& cfg, bool decay) {
    if (grad.size() != param.size()) {
        throw ContractError("adamw_step: gradient has " + std::to_string(grad.size()) + " elements, parameter has " +
                            std::to_string(param.size()));
    }
    if (slot.m.empty()) {
        slot.m.assign(param.size(), 0.0);
        slot.v.assign(param.size(), 0.0);
    }
    if (slot.m.size() != param.size()) throw ContractError("adamw_step: moment buffers do not match parameter shape");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double wd = decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        double p = param[i];
        p -= lr * wd * p;
        p -= lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + cfg.eps);
        param[i] = static_cast<T>(p);
    }
}

/// AdamW over a fixed list of tensors. Weight decay applies to matrices and
/// higher-rank tensors only; biases, norm parameters and the mask token are exempt.
template <Scalar T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg), slots_(params_.size()) {}

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step(double lr) {
        ++t_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) p.mutable_grad();
            adamw_step<T>(p.mutable_data(), p.grad(), slots_[i], lr, t_, cfg_, p.rank() >= 2);
        }
    }

    std::size_t steps_taken() const { return t_; }
    const OptimConfig& config() const { return cfg_; }
    const std::vector<Tensor<T>>& params() const { return params_; }

private:
    std::vector<Tensor<T>> params_;
    OptimConfig cfg_;
    std::vector<MomentSlot> slots_;
    std::size_t t_ = 0;
};

/// Append-only `step<TAB>lr<TAB>loss` log.
class RunLog {
public:
    RunLog() = default;
    explicit RunLog(std::filesystem::path path) : path_(std::move(path)) {
        std::ofstream(path_, std::ios::trunc);
    }

    void append(std::size_t step, double lr, double loss) {
        char line[96];
        std::snprintf(line, sizeof line, "%zu\t%.9g\t%.9g\n", step, lr, loss);
        lines_.emplace_back(line);
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            out << line;
        }
    }

    const std::vector<std::string>& lines() const { return lines_; }

private:
    std::filesystem::path path_;
    std::vector<std::string> lines_;
};

/// Per-run scheduling state shared by successive epochs.
template <Scalar T>
struct TrainState {
    AdamW<T> optimizer;
    std::size_t total_steps = 0;
    std::size_t warmup_steps = 0;
    std::size_t step = 0;
    RunLog* log = nullptr;

    TrainState(std::vector<Tensor<T>> params, const OptimConfig& cfg, std::size_t samples, RunLog* run_log = nullptr)
        : optimizer(std::move(params), cfg), log(run_log) {
        cfg.validate();
        const auto per_epoch = steps_per_epoch(samples, cfg.batch_size);
        total_steps = per_epoch * cfg.epochs;
        warmup_steps = static_cast<std::size_t>(std::llround(cfg.warmup_epochs * static_cast<double>(per_epoch)));
    }
};

/// Batch loss callback: sample indices of the batch plus the run's generator.
template <Scalar T>
using BatchLoss = std::function<Tensor<T>(std::span<const std::size_t>, Rng&)>;

/// One pass over `samples` items in seeded random order. Fixed-size batches,
/// last partial batch kept, one optimizer step per batch. Returns the mean batch loss.
template <Scalar T>
double train_epoch(std::size_t samples, TrainState<T>& state, Rng& rng, const BatchLoss<T>& batch_loss) {
    if (samples == 0) throw ConfigError("train_epoch: dataset is empty");
    std::vector<std::size_t> order(samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));

    const std::size_t batch = state.optimizer.config().batch_size;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < samples; start += batch) {
        const auto idx = std::span(order).subspan(start, std::min(batch, samples - start));
        state.optimizer.zero_grad();
        const auto loss = batch_loss(idx, rng);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            throw NumericError("non-finite loss at step " + std::to_string(state.step), state.step);
        }
        loss.backward();
        const double lr = lr_at(state.step, state.optimizer.config(), state.total_steps, state.warmup_steps);
        state.optimizer.step(lr);
        if (state.log) state.log->append(state.step, lr, value);
        ++state.step;
        total += value;
        ++batches;
    }
    return total / static_cast<double>(batches);
}

}  // namespace maekit
