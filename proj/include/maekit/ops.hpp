#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/kernels.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

namespace detail {

template <Scalar T>
std::span<T> grad_of(const std::shared_ptr<Node<T>>& node) {
    return node->grad_buffer();
}

/// Broadcast two shapes by aligning trailing dimensions. Missing leading
/// dimensions are treated as 1; any other disagreement is an error.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, std::string_view op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                                 to_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

/// Element strides of `in` laid over `out`; broadcast dimensions get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t axis_in = in.size() - 1 - k;
        const std::size_t axis_out = out.size() - 1 - k;
        strides[axis_out] = in[axis_in] == 1 ? 0 : stride;
        stride *= in[axis_in];
    }
    return strides;
}

/// Calls f(out_index, a_index, b_index) for every element of the broadcast result.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t rank = out.size();
    if (rank == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = out[rank - 1];
    const std::size_t sa_inner = sa[rank - 1];
    const std::size_t sb_inner = sb[rank - 1];
    const std::size_t total = numel_of(out);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < total; o += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * sa_inner, ib + j * sb_inner);
        for (std::size_t axis = rank - 1; axis-- > 0;) {
            ++counter[axis];
            ia += sa[axis];
            ib += sb[axis];
            if (counter[axis] < out[axis]) break;
            ia -= sa[axis] * out[axis];
            ib -= sb[axis] * out[axis];
            counter[axis] = 0;
        }
    }
}

struct AxisSplit {
    std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, std::string_view op) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + to_string(shape));
    }
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <Scalar T>
void require_rank(const Tensor<T>& x, std::size_t rank, std::string_view op) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             to_string(x.shape()));
    }
}

template <Scalar T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                             to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T{0});
    kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>({m, n}, std::move(out), "matmul", {a, b},
                                  [an, bn, m, n, k](detail::Node<T>& self) {
                                      if (an->requires_grad) {
                                          kernels::gemm_nt(m, n, k, self.grad.data(), bn->data.data(),
                                                           an->grad_buffer().data());
                                      }
                                      if (bn->requires_grad) {
                                          kernels::gemm_tn(m, n, k, an->data.data(), self.grad.data(),
                                                           bn->grad_buffer().data());
                                      }
                                  });
}

template <Scalar T>
Tensor<T> transpose(const Tensor<T>& x) {
    detail::require_rank(x, 2, "transpose");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<T> out(r * c);
    const auto in = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    auto xn = x.node();
    return detail::make_result<T>({c, r}, std::move(out), "transpose", {x},
                                  [xn, r, c](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t i = 0; i < r; ++i)
                                          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
                                  });
}

// ---------------------------------------------------------------- broadcasting arithmetic

namespace detail {

enum class Binary { add, sub, mul };

template <Scalar T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, std::string_view name) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    std::vector<T> out(numel_of(out_shape));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = kind == Binary::add ? ad[i] + bd[i] : kind == Binary::sub ? ad[i] - bd[i] : ad[i] * bd[i];
        }
    } else {
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            out[o] = kind == Binary::add ? ad[ia] + bd[ib] : kind == Binary::sub ? ad[ia] - bd[ib] : ad[ia] * bd[ib];
        });
    }
    auto an = a.node(), bn = b.node();
    return make_result<T>(out_shape, std::move(out), name, {a, b},
                          [an, bn, out_shape, sa, sb, kind](Node<T>& self) {
                              const T* g = self.grad.data();
                              T* ga = an->requires_grad ? an->grad_buffer().data() : nullptr;
                              T* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
                              const T* ad = an->data.data();
                              const T* bd = bn->data.data();
                              for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                  switch (kind) {
                                      case Binary::add:
                                          if (ga) ga[ia] += g[o];
                                          if (gb) gb[ib] += g[o];
                                          break;
                                      case Binary::sub:
                                          if (ga) ga[ia] += g[o];
                                          if (gb) gb[ib] -= g[o];
                                          break;
                                      case Binary::mul:
                                          if (ga) ga[ia] += g[o] * bd[ib];
                                          if (gb) gb[ib] += g[o] * ad[ia];
                                          break;
                                  }
                              });
                          });
}

}  // namespace detail

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::add, "add");
}

template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::sub, "sub");
}

template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::mul, "mul");
}

template <Scalar T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= factor;
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(out), "scale", {x}, [xn, factor](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

// ---------------------------------------------------------------- pointwise nonlinearities

/// Exact (erf-based) Gaussian error linear unit.
template <Scalar T>
Tensor<T> gelu(const Tensor<T>& x) {
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = T{0.5} * in[i] * (T{1} + std::erf(in[i] * static_cast<T>(std::numbers::sqrt2 / 2)));
    }
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(out), "gelu", {x}, [xn](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xn->data[i];
            const T cdf = T{0.5} * (T{1} + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
            const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

namespace detail {
template <Scalar T>
T stable_sigmoid(T v) {
    if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
    const T e = std::exp(v);
    return e / (T{1} + e);
}
}  // namespace detail

template <Scalar T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = detail::stable_sigmoid(in[i]);
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(out), "sigmoid", {x}, [xn](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = self.data[i];
            g[i] += self.grad[i] * y * (T{1} - y);
        }
    });
}

template <Scalar T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto s = detail::split_axis(x.shape(), axis, "softmax");
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
            const std::size_t base = o * s.n * s.inner + j;
            T mx = in[base];
            for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, in[base + i * s.inner]);
            T total{0};
            for (std::size_t i = 0; i < s.n; ++i) {
                const T e = std::exp(in[base + i * s.inner] - mx);
                out[base + i * s.inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= total;
        }
    }
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(out), "softmax", {x}, [xn, s](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t j = 0; j < s.inner; ++j) {
                const std::size_t base = o * s.n * s.inner + j;
                T dot{0};
                for (std::size_t i = 0; i < s.n; ++i) {
                    const std::size_t k = base + i * s.inner;
                    dot += self.grad[k] * self.data[k];
                }
                for (std::size_t i = 0; i < s.n; ++i) {
                    const std::size_t k = base + i * s.inner;
                    g[k] += self.data[k] * (self.grad[k] - dot);
                }
            }
        }
    });
}

/// Normalize to zero mean and unit (population) variance along `axis`.
/// No affine terms; callers apply gain and offset with mul/add.
template <Scalar T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, T eps = T{1e-6}) {
    const auto s = detail::split_axis(x.shape(), axis, "layer_norm");
    const auto in = x.data();
    std::vector<T> out(in.size());
    std::vector<T> inv_std(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
            const std::size_t base = o * s.n * s.inner + j;
            T mean{0};
            for (std::size_t i = 0; i < s.n; ++i) mean += in[base + i * s.inner];
            mean /= static_cast<T>(s.n);
            T var{0};
            for (std::size_t i = 0; i < s.n; ++i) {
                const T d = in[base + i * s.inner] - mean;
                var += d * d;
            }
            var /= static_cast<T>(s.n);
            const T r = T{1} / std::sqrt(var + eps);
            inv_std[o * s.inner + j] = r;
            for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] = (in[base + i * s.inner] - mean) * r;
        }
    }
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), "layer_norm", {x}, [xn, s, inv_std = std::move(inv_std)](detail::Node<T>& self) {
            auto g = xn->grad_buffer();
            const T n = static_cast<T>(s.n);
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t j = 0; j < s.inner; ++j) {
                    const std::size_t base = o * s.n * s.inner + j;
                    T mean_g{0}, mean_gx{0};
                    for (std::size_t i = 0; i < s.n; ++i) {
                        const std::size_t k = base + i * s.inner;
                        mean_g += self.grad[k];
                        mean_gx += self.grad[k] * self.data[k];
                    }
                    mean_g /= n;
                    mean_gx /= n;
                    const T r = inv_std[o * s.inner + j];
                    for (std::size_t i = 0; i < s.n; ++i) {
                        const std::size_t k = base + i * s.inner;
                        g[k] += r * (self.grad[k] - mean_g - self.data[k] * mean_gx);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------- reductions

template <Scalar T>
Tensor<T> sum(const Tensor<T>& x) {
    T total{0};
    for (T v : x.data()) total += v;
    auto xn = x.node();
    return detail::make_result<T>({}, {total}, "sum", {x}, [xn](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <Scalar T>
Tensor<T> mean(const Tensor<T>& x) {
    T total{0};
    for (T v : x.data()) total += v;
    const T n = static_cast<T>(x.numel());
    auto xn = x.node();
    return detail::make_result<T>({}, {total / n}, "mean", {x}, [xn, n](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        for (auto& v : g) v += self.grad[0] / n;
    });
}

namespace detail {
inline Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out.push_back(shape[i]);
    return out;
}
}  // namespace detail

/// Mean along `axis`; the axis is removed from the result shape.
template <Scalar T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
    const auto s = detail::split_axis(x.shape(), axis, "mean");
    const auto in = x.data();
    std::vector<T> out(s.outer * s.inner, T{0});
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.n; ++i)
            for (std::size_t j = 0; j < s.inner; ++j) out[o * s.inner + j] += in[(o * s.n + i) * s.inner + j];
    for (auto& v : out) v /= static_cast<T>(s.n);
    auto xn = x.node();
    return detail::make_result<T>(detail::drop_axis(x.shape(), axis), std::move(out), "mean_axis", {x},
                                  [xn, s](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      const T n = static_cast<T>(s.n);
                                      for (std::size_t o = 0; o < s.outer; ++o)
                                          for (std::size_t i = 0; i < s.n; ++i)
                                              for (std::size_t j = 0; j < s.inner; ++j)
                                                  g[(o * s.n + i) * s.inner + j] += self.grad[o * s.inner + j] / n;
                                  });
}

/// Population variance along `axis`; the axis is removed from the result shape.
template <Scalar T>
Tensor<T> variance(const Tensor<T>& x, std::size_t axis) {
    const auto s = detail::split_axis(x.shape(), axis, "variance");
    const auto in = x.data();
    const T n = static_cast<T>(s.n);
    std::vector<T> means(s.outer * s.inner, T{0});
    std::vector<T> out(s.outer * s.inner, T{0});
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
            T m{0};
            for (std::size_t i = 0; i < s.n; ++i) m += in[(o * s.n + i) * s.inner + j];
            m /= n;
            T v{0};
            for (std::size_t i = 0; i < s.n; ++i) {
                const T d = in[(o * s.n + i) * s.inner + j] - m;
                v += d * d;
            }
            means[o * s.inner + j] = m;
            out[o * s.inner + j] = v / n;
        }
    }
    auto xn = x.node();
    return detail::make_result<T>(detail::drop_axis(x.shape(), axis), std::move(out), "variance", {x},
                                  [xn, s, n, means = std::move(means)](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t o = 0; o < s.outer; ++o)
                                          for (std::size_t i = 0; i < s.n; ++i)
                                              for (std::size_t j = 0; j < s.inner; ++j) {
                                                  const std::size_t k = (o * s.n + i) * s.inner + j;
                                                  g[k] += self.grad[o * s.inner + j] * T{2} *
                                                          (xn->data[k] - means[o * s.inner + j]) / n;
                                              }
                                  });
}

/// Mean squared error over all elements of two equally shaped tensors.
template <Scalar T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mse");
    const auto ad = a.data(), bd = b.data();
    T total{0};
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const T d = ad[i] - bd[i];
        total += d * d;
    }
    const T n = static_cast<T>(ad.size());
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>({}, {total / n}, "mse", {a, b}, [an, bn, n](detail::Node<T>& self) {
        const T scale_factor = T{2} * self.grad[0] / n;
        for (std::size_t i = 0; i < an->data.size(); ++i) {
            const T d = an->data[i] - bn->data[i];
            if (an->requires_grad) an->grad_buffer()[i] += scale_factor * d;
            if (bn->requires_grad) bn->grad_buffer()[i] -= scale_factor * d;
        }
    });
}

// ---------------------------------------------------------------- fused losses

/// Mean cross-entropy of softmax(logits) against integer labels.
/// Computed through log-sum-exp for stability.
template <Scalar T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    detail::require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t rows = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != rows) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(rows) + " rows but " +
                             std::to_string(labels.size()) + " labels");
    }
    const auto in = logits.data();
    std::vector<T> probs(in.size());
    T total{0};
    for (std::size_t r = 0; r < rows; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                             std::to_string(classes) + ")");
        }
        const T* row = in.data() + r * classes;
        T mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        T z{0};
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - lse);
        total += lse - row[label];
    }
    auto ln = logits.node();
    std::vector<int> owned(labels.begin(), labels.end());
    return detail::make_result<T>(
        {}, {total / static_cast<T>(rows)}, "softmax_cross_entropy", {logits},
        [ln, rows, classes, probs = std::move(probs), owned = std::move(owned)](detail::Node<T>& self) {
            auto g = ln->grad_buffer();
            const T f = self.grad[0] / static_cast<T>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < classes; ++c) {
                    const T onehot = static_cast<std::size_t>(owned[r]) == c ? T{1} : T{0};
                    g[r * classes + c] += f * (probs[r * classes + c] - onehot);
                }
        });
}

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
template <Scalar T>
Tensor<T> sigmoid_bce(const Tensor<T>& logits, const Tensor<T>& targets) {
    detail::require_same_shape(logits, targets, "sigmoid_bce");
    const auto x = logits.data(), t = targets.data();
    T total{0};
    for (std::size_t i = 0; i < x.size(); ++i) {
        total += std::max(x[i], T{0}) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
    }
    const T n = static_cast<T>(x.size());
    auto ln = logits.node(), tn = targets.node();
    return detail::make_result<T>({}, {total / n}, "sigmoid_bce", {logits}, [ln, tn, n](detail::Node<T>& self) {
        auto g = ln->grad_buffer();
        const T f = self.grad[0] / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * (detail::stable_sigmoid(ln->data[i]) - tn->data[i]);
    });
}

// ---------------------------------------------------------------- layout

template <Scalar T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    auto xn = x.node();
    return detail::make_result<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), "reshape",
                                  {x}, [xn](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  });
}

/// Rows `idx` of a 2-D tensor: out[i] = x[idx[i]].
template <Scalar T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
    detail::require_rank(x, 2, "gather_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (idx.empty()) throw DimensionError("gather_rows: empty index list");
    for (auto i : idx) {
        if (i >= n) {
            throw IndexError("gather_rows: index " + std::to_string(i) + " out of range [0," + std::to_string(n) + ")");
        }
    }
    const auto in = x.data();
    std::vector<T> out(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
    auto xn = x.node();
    std::vector<std::size_t> owned(idx.begin(), idx.end());
    return detail::make_result<T>({idx.size(), d}, std::move(out), "gather_rows", {x},
                                  [xn, d, owned = std::move(owned)](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t r = 0; r < owned.size(); ++r)
                                          for (std::size_t c = 0; c < d; ++c) g[owned[r] * d + c] += self.grad[r * d + c];
                                  });
}

/// Inverse placement of gather_rows: out[idx[i]] = x[i] in an n-row result.
/// Rows not named by idx are zero; duplicate targets accumulate.
template <Scalar T>
Tensor<T> scatter_rows(const Tensor<T>& x, std::span<const std::size_t> idx, std::size_t n) {
    detail::require_rank(x, 2, "scatter_rows");
    const std::size_t k = x.dim(0), d = x.dim(1);
    if (idx.size() != k) {
        throw DimensionError("scatter_rows: " + std::to_string(k) + " rows but " + std::to_string(idx.size()) +
                             " indices");
    }
    for (auto i : idx) {
        if (i >= n) {
            throw IndexError("scatter_rows: index " + std::to_string(i) + " out of range [0," + std::to_string(n) + ")");
        }
    }
    const auto in = x.data();
    std::vector<T> out(n * d, T{0});
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < d; ++c) out[idx[r] * d + c] += in[r * d + c];
    auto xn = x.node();
    std::vector<std::size_t> owned(idx.begin(), idx.end());
    return detail::make_result<T>({n, d}, std::move(out), "scatter_rows", {x},
                                  [xn, d, owned = std::move(owned)](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t r = 0; r < owned.size(); ++r)
                                          for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[owned[r] * d + c];
                                  });
}

/// Stack 2-D tensors with equal column counts vertically.
template <Scalar T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t d = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != d) {
            throw DimensionError("concat_rows: incompatible part " + to_string(p.shape()) + " (columns " +
                                 std::to_string(d) + ")");
        }
        rows += p.dim(0);
    }
    std::vector<T> out;
    out.reserve(rows * d);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result<T>({rows, d}, std::move(out), "concat_rows", parts,
                                  [nodes = std::move(nodes)](detail::Node<T>& self) {
                                      std::size_t offset = 0;
                                      for (const auto& pn : nodes) {
                                          const std::size_t len = pn->data.size();
                                          if (pn->requires_grad) {
                                              auto g = pn->grad_buffer();
                                              for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
                                          }
                                          offset += len;
                                      }
                                  });
}

/// Columns [start, start+len) of a 2-D tensor.
template <Scalar T>
Tensor<T> narrow_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
    detail::require_rank(x, 2, "narrow_cols");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (len == 0 || start + len > cols) {
        throw IndexError("narrow_cols: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") outside " + std::to_string(cols) + " columns");
    }
    const auto in = x.data();
    std::vector<T> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < len; ++c) out[r * len + c] = in[r * cols + start + c];
    auto xn = x.node();
    return detail::make_result<T>({rows, len}, std::move(out), "narrow_cols", {x},
                                  [xn, rows, cols, start, len](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t r = 0; r < rows; ++r)
                                          for (std::size_t c = 0; c < len; ++c) g[r * cols + start + c] += self.grad[r * len + c];
                                  });
}

/// Place 2-D tensors with equal row counts side by side.
template <Scalar T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) {
            throw DimensionError("concat_cols: incompatible part " + to_string(p.shape()));
        }
        cols += p.dim(1);
    }
    std::vector<T> out(rows * cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        const auto in = p.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) out[r * cols + offset + c] = in[r * w + c];
        offset += w;
    }
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result<T>({rows, cols}, std::move(out), "concat_cols", parts,
                                  [nodes = std::move(nodes), rows, cols](detail::Node<T>& self) {
                                      std::size_t off = 0;
                                      for (const auto& pn : nodes) {
                                          const std::size_t w = pn->shape[1];
                                          if (pn->requires_grad) {
                                              auto g = pn->grad_buffer();
                                              for (std::size_t r = 0; r < rows; ++r)
                                                  for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + off + c];
                                          }
                                          off += w;
                                      }
                                  });
}

/// Stack equally shaped tensors along a new leading axis.
template <Scalar T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("stack: no inputs");
    const Shape& inner = parts.front().shape();
    for (const auto& p : parts) {
        if (p.shape() != inner) {
            throw DimensionError("stack: shape " + to_string(p.shape()) + " differs from " + to_string(inner));
        }
    }
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<T> out;
    out.reserve(numel_of(shape));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result<T>(std::move(shape), std::move(out), "stack", parts,
                                  [nodes = std::move(nodes)](detail::Node<T>& self) {
                                      std::size_t offset = 0;
                                      for (const auto& pn : nodes) {
                                          const std::size_t len = pn->data.size();
                                          if (pn->requires_grad) {
                                              auto g = pn->grad_buffer();
                                              for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
                                          }
                                          offset += len;
                                      }
                                  });
}

/// Slice `index` of the leading axis; the axis is removed.
template <Scalar T>
Tensor<T> select(const Tensor<T>& x, std::size_t index) {
    if (x.rank() == 0) throw DimensionError("select: scalar has no leading axis");
    if (index >= x.dim(0)) {
        throw IndexError("select: index " + std::to_string(index) + " out of range for shape " + to_string(x.shape()));
    }
    Shape shape(x.shape().begin() + 1, x.shape().end());
    const std::size_t len = numel_of(shape);
    const auto begin = x.data().begin() + static_cast<std::ptrdiff_t>(index * len);
    auto xn = x.node();
    return detail::make_result<T>(std::move(shape), std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(len)),
                                  "select", {x}, [xn, index, len](detail::Node<T>& self) {
                                      auto g = xn->grad_buffer();
                                      for (std::size_t i = 0; i < len; ++i) g[index * len + i] += self.grad[i];
                                  });
}

// ---------------------------------------------------------------- convolution

/// Transposed 2-D convolution of one sample.
///
/// x: [c_in, h, w], weights: [c_in, c_out, 2, 2]. Only kernel 2x2 with stride 2
/// is implemented; the output is [c_out, 2h, 2w] with
/// out[o, 2i+a, 2j+b] = sum_c x[c, i, j] * weights[c, o, a, b].
template <Scalar T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weights, std::size_t kernel = 2,
                           std::size_t stride = 2) {
    if (kernel != 2 || stride != 2) {
        throw UnsupportedConfigError("conv_transpose2d: only kernel 2x2 with stride 2 is supported (got kernel " +
                                     std::to_string(kernel) + ", stride " + std::to_string(stride) + ")");
    }
    detail::require_rank(x, 3, "conv_transpose2d");
    if (weights.rank() != 4 || weights.dim(2) != 2 || weights.dim(3) != 2) {
        throw UnsupportedConfigError("conv_transpose2d: weights must be [c_in, c_out, 2, 2], got " +
                                     to_string(weights.shape()));
    }
    if (weights.dim(0) != x.dim(0)) {
        throw DimensionError("conv_transpose2d: input " + to_string(x.shape()) + " does not match weights " +
                             to_string(weights.shape()));
    }
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = weights.dim(1);
    const std::size_t hw = h * w, q = cout * 4;

    // cols[q, p] = sum_c W[c, q] * x[c, p], q = (o, a, b) flattened.
    std::vector<T> cols(q * hw, T{0});
    kernels::gemm_tn(cin, hw, q, weights.data().data(), x.data().data(), cols.data());

    std::vector<T> out(cout * 4 * hw);
    const std::size_t ow = 2 * w;
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
                const T* src = cols.data() + ((o * 2 + a) * 2 + b) * hw;
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) out[(o * 2 * h + 2 * i + a) * ow + 2 * j + b] = src[i * w + j];
            }

    auto xn = x.node(), wn = weights.node();
    return detail::make_result<T>(
        {cout, 2 * h, 2 * w}, std::move(out), "conv_transpose2d", {x, weights},
        [xn, wn, cin, cout, h, w, hw, q](detail::Node<T>& self) {
            const std::size_t ow = 2 * w;
            std::vector<T> gcols(q * hw);
            for (std::size_t o = 0; o < cout; ++o)
                for (std::size_t a = 0; a < 2; ++a)
                    for (std::size_t b = 0; b < 2; ++b) {
                        T* dst = gcols.data() + ((o * 2 + a) * 2 + b) * hw;
                        for (std::size_t i = 0; i < h; ++i)
                            for (std::size_t j = 0; j < w; ++j)
                                dst[i * w + j] = self.grad[(o * 2 * h + 2 * i + a) * ow + 2 * j + b];
                    }
            if (xn->requires_grad) {
                kernels::gemm_nn(cin, hw, q, wn->data.data(), gcols.data(), xn->grad_buffer().data());
            }
            if (wn->requires_grad) {
                kernels::gemm_nt(cin, hw, q, xn->data.data(), gcols.data(), wn->grad_buffer().data());
            }
        });
}

}  // namespace maekit
