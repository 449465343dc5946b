#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }

    bool operator==(const ConfusionCounts&) const = default;
};

/// Index of the largest value per row of a [rows, classes] tensor; ties go to
/// the lowest index.
template <Scalar T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
    if (scores.rank() != 2) throw DimensionError("argmax_rows: expected [rows, classes], got " + to_string(scores.shape()));
    const std::size_t rows = scores.dim(0), classes = scores.dim(1);
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (scores.data()[r * classes + c] > scores.data()[r * classes + best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
    if (preds.empty()) throw ContractError("accuracy: empty input");
    if (preds.size() != labels.size()) throw ContractError("accuracy: prediction and label counts differ");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

/// 2tp / (2tp + fp + fn); 0 when nothing is positive in either prediction or truth.
inline double f_score(const ConfusionCounts& c) {
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 0.0;
    return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

/// Pixel-wise counts over whole tensors of binary {0,1} masks.
template <Scalar T>
ConfusionCounts segmentation_confusion(const Tensor<T>& pred, const Tensor<T>& truth) {
    if (pred.shape() != truth.shape()) {
        throw ContractError("segmentation_confusion: shape " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
    }
    ConfusionCounts c;
    const auto p = pred.data(), t = truth.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if ((p[i] != T{0} && p[i] != T{1}) || (t[i] != T{0} && t[i] != T{1})) {
            throw ContractError("segmentation_confusion: masks must be binary");
        }
        const bool pp = p[i] == T{1}, tt = t[i] == T{1};
        if (pp && tt) ++c.tp;
        else if (pp) ++c.fp;
        else if (tt) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// Mean of per-image f-scores over the leading axis (secondary view to the
/// micro-aggregated score).
template <Scalar T>
double mean_image_f_score(const Tensor<T>& pred, const Tensor<T>& truth) {
    if (pred.shape() != truth.shape() || pred.rank() == 0) {
        throw ContractError("mean_image_f_score: shape " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
    }
    const std::size_t images = pred.dim(0);
    const std::size_t per = pred.numel() / images;
    double total = 0.0;
    for (std::size_t b = 0; b < images; ++b) {
        const Tensor<T> p({per}, std::vector<T>(pred.data().begin() + static_cast<std::ptrdiff_t>(b * per),
                                                pred.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * per)));
        const Tensor<T> t({per}, std::vector<T>(truth.data().begin() + static_cast<std::ptrdiff_t>(b * per),
                                                truth.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * per)));
        total += f_score(segmentation_confusion(p, t));
    }
    return total / static_cast<double>(images);
}

/// `metric<TAB>value` lines, six decimals.
inline std::string format_metrics(const std::vector<std::pair<std::string, double>>& metrics) {
    std::string out;
    char buf[64];
    for (const auto& [name, value] : metrics) {
        std::snprintf(buf, sizeof buf, "\t%.6f\n", value);
        out += name + buf;
    }
    return out;
}

inline void write_metrics(const std::vector<std::pair<std::string, double>>& metrics, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << format_metrics(metrics);
}

}  // namespace maekit
