#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "maekit/gradcheck.hpp"
#include "maekit/model.hpp"
#include "maekit/ops.hpp"
#include "maekit/patchwork.hpp"
#include "maekit/rng.hpp"

namespace maekit {

inline constexpr double kGradCheckTolerance = 1e-5;

struct GradCheckCase {
    std::string op;
    std::string label;
    std::function<double()> run;
};

struct GradCheckOutcome {
    std::string op;
    std::string label;
    double max_error = 0.0;
    bool ok() const { return max_error < kGradCheckTolerance; }
};

namespace detail {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(shape, std::move(v));
}

// Reduce y to a scalar through fixed random weights so that every output
// element reaches the gradient with a distinct coefficient.
inline Tensor<double> readout(const Tensor<double>& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

inline std::string shape_label(std::initializer_list<Shape> shapes) {
    std::string s;
    for (const auto& sh : shapes) s += (s.empty() ? "" : " ") + to_string(sh);
    return s;
}

}  // namespace detail

/// Micro configuration used by the full-loss gradient check.
inline ArchConfig micro_config() {
    ArchConfig c;
    c.patch = {8, 4};
    c.enc_dim = 8;
    c.enc_depth = 1;
    c.enc_heads = 2;
    c.dec_dim = 8;
    c.dec_depth = 1;
    c.dec_heads = 2;
    return c;
}

/// Every differentiable op on three shapes each, plus the full MAE loss.
inline std::vector<GradCheckCase> gradcheck_cases() {
    using T = Tensor<double>;
    std::vector<GradCheckCase> cases;
    std::uint64_t seed = 100;

    auto unary = [&](std::string op, Shape shape, std::function<T(const T&)> f) {
        const std::uint64_t s = seed++;
        cases.push_back({op, detail::shape_label({shape}), [shape, f, s] {
                             Rng rng(s);
                             T x = detail::random_tensor(shape, rng);
                             return grad_check([&] { return detail::readout(f(x), s + 7); }, {x});
                         }});
    };
    auto binary = [&](std::string op, Shape sa, Shape sb, std::function<T(const T&, const T&)> f) {
        const std::uint64_t s = seed++;
        cases.push_back({op, detail::shape_label({sa, sb}), [sa, sb, f, s] {
                             Rng rng(s);
                             T a = detail::random_tensor(sa, rng);
                             T b = detail::random_tensor(sb, rng);
                             return grad_check([&] { return detail::readout(f(a, b), s + 7); }, {a, b});
                         }});
    };
    auto scalar_out = [&](std::string op, Shape shape, std::function<T(const T&)> f) {
        const std::uint64_t s = seed++;
        cases.push_back({op, detail::shape_label({shape}), [shape, f, s] {
                             Rng rng(s);
                             T x = detail::random_tensor(shape, rng);
                             return grad_check([&] { return f(x); }, {x});
                         }});
    };

    for (auto [a, b] : std::vector<std::pair<Shape, Shape>>{{{2, 3}, {3, 4}}, {{1, 5}, {5, 1}}, {{4, 2}, {2, 3}}})
        binary("matmul", a, b, [](const T& x, const T& y) { return matmul(x, y); });
    for (Shape s : {Shape{2, 3}, Shape{1, 4}, Shape{5, 2}}) unary("transpose", s, [](const T& x) { return transpose(x); });

    const std::vector<std::pair<Shape, Shape>> bshapes{{{2, 3}, {2, 3}}, {{2, 3}, {3}}, {{4, 1, 3}, {2, 1}}};
    for (auto [a, b] : bshapes) binary("add", a, b, [](const T& x, const T& y) { return add(x, y); });
    for (auto [a, b] : bshapes) binary("sub", a, b, [](const T& x, const T& y) { return sub(x, y); });
    for (auto [a, b] : bshapes) binary("mul", a, b, [](const T& x, const T& y) { return mul(x, y); });

    for (Shape s : {Shape{3}, Shape{2, 3}, Shape{2, 2, 2}}) {
        unary("scale", s, [](const T& x) { return scale(x, -1.7); });
        unary("gelu", s, [](const T& x) { return gelu(scale(x, 3.0)); });
        unary("sigmoid", s, [](const T& x) { return sigmoid(scale(x, 4.0)); });
        scalar_out("sum", s, [](const T& x) { return sum(x); });
        scalar_out("mean", s, [](const T& x) { return mean(x); });
        unary("reshape", s, [](const T& x) { return reshape(x, {x.numel()}); });
    }
    for (auto [s, axis] : std::vector<std::pair<Shape, std::size_t>>{{{2, 3}, 1}, {{3, 4}, 0}, {{2, 3, 4}, 2}}) {
        unary("softmax", s, [axis](const T& x) { return softmax(scale(x, 2.0), axis); });
        unary("layer_norm", s, [axis](const T& x) { return layer_norm(x, axis); });
        unary("mean_axis", s, [axis](const T& x) { return mean(x, axis); });
        unary("variance", s, [axis](const T& x) { return variance(x, axis); });
    }
    for (Shape s : {Shape{4}, Shape{2, 3}, Shape{3, 1, 2}})
        binary("mse", s, s, [](const T& x, const T& y) { return mse(x, y); });

    for (auto [rows, k] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 3}, {4, 2}, {1, 5}}) {
        const std::uint64_t s = seed++;
        cases.push_back({"softmax_cross_entropy", detail::shape_label({Shape{rows, k}}), [rows, k, s] {
                             Rng rng(s);
                             T x = detail::random_tensor({rows, k}, rng, -2.0, 2.0);
                             std::vector<int> labels(rows);
                             for (auto& l : labels) l = static_cast<int>(rng.below(k));
                             return grad_check([&] { return softmax_cross_entropy(x, std::span<const int>(labels)); }, {x});
                         }});
    }
    for (Shape sh : {Shape{3}, Shape{2, 3}, Shape{1, 2, 2}}) {
        const std::uint64_t s = seed++;
        cases.push_back({"sigmoid_bce", detail::shape_label({sh}), [sh, s] {
                             Rng rng(s);
                             T x = detail::random_tensor(sh, rng, -3.0, 3.0);
                             std::vector<double> t(x.numel());
                             for (std::size_t i = 0; i < t.size(); ++i) t[i] = i % 3 == 2 ? 0.25 : static_cast<double>(i % 2);
                             const T target(sh, std::move(t));
                             return grad_check([&] { return sigmoid_bce(x, target); }, {x});
                         }});
    }

    const std::vector<std::pair<Shape, std::vector<std::size_t>>> row_sets{
        {{4, 3}, {2, 0, 3}}, {{3, 2}, {1, 1, 0}}, {{5, 1}, {4, 3, 2, 1, 0}}};
    for (const auto& [s, idx] : row_sets)
        unary("gather_rows", s, [idx](const T& x) { return gather_rows(x, std::span<const std::size_t>(idx)); });
    for (const auto& [s, idx] : std::vector<std::pair<Shape, std::vector<std::size_t>>>{
             {{3, 2}, {2, 0, 1}}, {{2, 3}, {3, 0}}, {{4, 1}, {1, 3, 0, 2}}}) {
        const std::size_t n = *std::max_element(idx.begin(), idx.end()) + 1;
        unary("scatter_rows", s, [idx, n](const T& x) { return scatter_rows(x, std::span<const std::size_t>(idx), n); });
    }
    for (auto [a, b] : std::vector<std::pair<Shape, Shape>>{{{1, 3}, {2, 3}}, {{2, 2}, {2, 2}}, {{3, 1}, {1, 1}}})
        binary("concat_rows", a, b, [](const T& x, const T& y) { return concat_rows(std::vector<T>{x, y}); });
    for (auto [a, b] : std::vector<std::pair<Shape, Shape>>{{{2, 1}, {2, 3}}, {{3, 2}, {3, 2}}, {{1, 4}, {1, 1}}})
        binary("concat_cols", a, b, [](const T& x, const T& y) { return concat_cols(std::vector<T>{x, y}); });
    for (auto [s, start, len] : std::vector<std::tuple<Shape, std::size_t, std::size_t>>{
             {{2, 5}, 1, 3}, {{3, 4}, 0, 2}, {{1, 3}, 2, 1}})
        unary("narrow_cols", s, [start, len](const T& x) { return narrow_cols(x, start, len); });
    for (Shape s : {Shape{3}, Shape{2, 2}, Shape{1, 2, 3}})
        binary("stack", s, s, [](const T& x, const T& y) { return stack(std::vector<T>{x, y, x}); });
    for (auto [s, i] : std::vector<std::pair<Shape, std::size_t>>{{{3, 2}, 1}, {{2, 2, 2}, 0}, {{4, 1, 3}, 3}})
        unary("select", s, [i](const T& x) { return select(x, i); });
    for (auto [x, w] : std::vector<std::pair<Shape, Shape>>{
             {{1, 1, 1}, {1, 1, 2, 2}}, {{2, 2, 3}, {2, 3, 2, 2}}, {{3, 1, 2}, {3, 2, 2, 2}}})
        binary("conv_transpose2d", x, w, [](const T& a, const T& b) { return conv_transpose2d(a, b); });
    for (PatchConfig pc : {PatchConfig{8, 4}, PatchConfig{4, 2}, PatchConfig{6, 3}})
        unary("patchify", {1, pc.image_size, pc.image_size}, [pc](const T& x) { return patchify(x, pc); });

    cases.push_back({"mae_loss", "micro config, all parameters", [] {
                         auto model = init_params<double>(micro_config(), 5);
                         Rng rng(1);
                         T images = detail::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
                         const std::vector<MaskPlan> plans{make_mask_plan(4, 0.5, rng), make_mask_plan(4, 0.5, rng)};
                         return grad_check(
                             [&] { return mae_forward_loss(images, std::span<const MaskPlan>(plans), model); },
                             model.parameters());
                     }});
    return cases;
}

inline std::vector<GradCheckOutcome> run_gradcheck_suite() {
    std::vector<GradCheckOutcome> out;
    for (const auto& c : gradcheck_cases()) out.push_back({c.op, c.label, c.run()});
    return out;
}

/// Worst error per op name, in first-seen order.
inline std::vector<GradCheckOutcome> worst_per_op(const std::vector<GradCheckOutcome>& outcomes) {
    std::vector<GradCheckOutcome> worst;
    for (const auto& o : outcomes) {
        auto it = std::find_if(worst.begin(), worst.end(), [&](const auto& w) { return w.op == o.op; });
        if (it == worst.end()) {
            worst.push_back(o);
        } else if (o.max_error > it->max_error) {
            *it = o;
        }
    }
    return worst;
}

}  // namespace maekit
